"""Command-line interface.

Exit codes: 0 success, 2 validation error (bad config, bad arguments, bad
input files), 3 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import calibration, scanning
from .config import ConfigError, default_config, load_config
from .device import MaskFileError, load_mask
from .service import SessionService

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _load_config_arg(path):
    if path is None:
        return default_config()
    return load_config(path)


def cmd_simulate(args) -> int:
    cfg = _load_config_arg(args.config)
    preset = cfg.preset(args.preset)
    inst = cfg.build_instrument(args.preset)
    seed = args.seed if args.seed is not None else (preset.noise or cfg.noise).seed
    result = scanning.execute(preset.plan, inst, seed=seed)
    scanning.save_map(result, args.out)
    print(f"wrote {result.plan.total_points()} samples to {args.out} "
          f"(session {result.session_id}, seed {seed})")
    return EXIT_OK


def cmd_fit_spot(args) -> int:
    img = calibration.read_pgm(args.image, pixel_pitch=args.pitch_um)
    spot = calibration.fit_spot(img)
    print(json.dumps({
        "center_mm": list(spot.center),
        "sigma_major_um": spot.sigma_major,
        "sigma_minor_um": spot.sigma_minor,
        "diameter_major_um": spot.diameter_major,
        "diameter_minor_um": spot.diameter_minor,
        "mean_diameter_um": spot.mean_diameter,
        "orientation_rad": spot.orientation,
    }, indent=2))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    response = scanning.load_map(args.map)
    mask = load_mask(args.mask)
    if mask.kind != "screen":
        print("calibrate needs a screen mask with known holes", file=sys.stderr)
        return EXIT_VALIDATION
    blobs = calibration.detect_holes(response, args.threshold)
    model = calibration.fit_mapping(
        blobs,
        [h.center for h in mask.holes],
        residual_gate_mm=args.residual_gate_mm,
    )
    model = calibration.MappingModel(
        affine=model.affine, offset=model.offset, kappa=model.kappa,
        residual_rms=model.residual_rms, config_hash=response.config_hash,
    )
    model.save(args.out)
    print(f"calibration written to {args.out}: kappa=({model.kappa[0]:.4f}, "
          f"{model.kappa[1]:.4f}), residual rms {model.residual_rms * 1e3:.1f} um "
          f"over {len(blobs)} blobs")
    return EXIT_OK


def cmd_steer(args) -> int:
    model = calibration.MappingModel.load(args.model)
    v = calibration.invert_mapping(model, tuple(args.to_mm))
    out = {
        "vx": v.vx,
        "vy": v.vy,
        "predicted_mm": list(model.predict(v)),
    }
    if args.config is not None:
        cfg = load_config(args.config)
        inst = cfg.build_instrument()
        inst.slew_to(v)
        pos = inst.predicted_position()
        out["twin_mm"] = list(pos) if pos is not None else None
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import ApiServer

    cfg = _load_config_arg(args.config)
    model = calibration.MappingModel.load(args.model) if args.model else None
    session = SessionService(cfg, preset=args.preset, model=model)
    log_fn = print if args.verbose else None
    server = ApiServer(session, host=args.host, port=args.port, log_fn=log_fn)
    print(f"cryoscan control service on http://{args.host}:{server.port} "
          f"(config {cfg.config_hash})")
    server.serve_forever()
    return EXIT_OK


def cmd_emit_config(args) -> int:
    text = default_config().to_json() + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cryoscan",
        description="Digital twin and calibration toolkit for a cryogenic "
                    "MEMS-mirror beam-steering system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a preset scan against the twin")
    p.add_argument("--config", help="system config JSON (defaults to the built-in config)")
    p.add_argument("--preset", required=True, help="preset name, e.g. fig5-screenplate")
    p.add_argument("--out", required=True, help="output response-map CSV")
    p.add_argument("--seed", type=int, help="override the preset noise seed")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("fit-spot", help="fit a beam spot in a PGM camera image")
    p.add_argument("image", help="16-bit binary PGM")
    p.add_argument("--pitch-um", type=float, required=True, dest="pitch_um",
                   help="pixel pitch in microns")
    p.set_defaults(fn=cmd_fit_spot)

    p = sub.add_parser("calibrate", help="fit the voltage->position mapping from a map")
    p.add_argument("map", help="response-map CSV from simulate/fetch")
    p.add_argument("--mask", required=True, help="mask geometry file with the known holes")
    p.add_argument("--out", required=True, help="output mapping-model JSON")
    p.add_argument("--threshold", type=float, default=0.3,
                   help="blob threshold as a fraction of the map maximum")
    p.add_argument("--residual-gate-mm", type=float, default=0.5, dest="residual_gate_mm")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("steer", help="invert a calibration to a physical target")
    p.add_argument("--model", required=True, help="mapping-model JSON")
    p.add_argument("--to-mm", type=float, nargs=2, required=True, dest="to_mm",
                   metavar=("X", "Y"))
    p.add_argument("--config", help="also trace the command through the twin")
    p.set_defaults(fn=cmd_steer)

    p = sub.add_parser("serve", help="run the HTTP control service")
    p.add_argument("--config", help="system config JSON")
    p.add_argument("--preset", help="apply a preset's overrides to the session")
    p.add_argument("--model", help="preload a mapping model for physical steering")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8917)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("emit-config", help="print the built-in default config JSON")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(fn=cmd_emit_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, MaskFileError, scanning.MapParseError,
            calibration.SpotFitError, calibration.CalibrationError,
            calibration.OutOfRangeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:   # noqa: BLE001 - CLI fault boundary
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
