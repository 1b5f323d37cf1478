#!/usr/bin/env python3
"""Regenerate the operator-console test fixtures from the simulated stack.

Outputs (under frontend/fixtures/):
    events_fig6.json   recorded event log: three steer + source-hold cycles
                       at the bright / modest / faint open-plate positions
    map_fig5.csv       golden screen-plate response map (as served by
                       GET /scan/{id}/map)
    model.json         mapping model fitted on the calibration plate with
                       the same distorted drive chain as the fig5 scan
    holes_fig5.json    the fig5 mask holes (mm) for the overlay
    status.json        a /status snapshot for the UI tests
"""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "frontend" / "fixtures"

from cryoscan import calibration, scanning
from cryoscan.config import default_config
from cryoscan.service import SessionService


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    cfg = default_config()

    # -- fig6-style event log: three dwell cycles with ordered responses ----
    svc = SessionService(cfg, preset="open-plate", session_id="fixture-fig6")
    for vx, vy in ((0.9, 0.65), (0.3, 0.3), (0.25, 0.15)):
        svc.steer(vx=vx, vy=vy)
        svc.source_control(True, wavelength=650.0, power=1e-6, hold_s=8.0,
                           sample_every_s=1.0)
        svc.source_control(False, hold_s=8.0, sample_every_s=1.0)
    events = [e.to_dict() for e in svc.events_since(0)]
    (OUT / "events_fig6.json").write_text(json.dumps(events, indent=1))

    # -- golden map + calibration model + overlay holes ---------------------
    preset = cfg.preset("fig5-screenplate")
    inst = cfg.build_instrument("fig5-screenplate")
    m = scanning.execute(preset.plan, inst, seed=preset.noise.seed)
    (OUT / "map_fig5.csv").write_text(scanning.map_to_csv(m))

    calib = cfg.preset("calib-3x3")
    calib_inst = cfg.build_instrument("calib-3x3")
    calib_map = scanning.execute(calib.plan, calib_inst, seed=calib.noise.seed)
    blobs = calibration.detect_holes(calib_map, calib.threshold_frac)
    model = calibration.fit_mapping(blobs, [h.center for h in calib_inst.mask.holes])
    model = calibration.MappingModel(
        affine=model.affine, offset=model.offset, kappa=model.kappa,
        residual_rms=model.residual_rms, config_hash=cfg.config_hash,
    )
    (OUT / "model.json").write_text(model.to_json() + "\n")

    holes = [{"u_mm": h.center[0], "v_mm": h.center[1], "radius_mm": h.radius}
             for h in preset.mask.holes]
    (OUT / "holes_fig5.json").write_text(json.dumps(holes, indent=1))

    status_svc = SessionService(cfg, session_id="fixture-status")
    status_svc.steer(vx=0.25, vy=0.4)
    (OUT / "status.json").write_text(json.dumps(status_svc.status(), indent=1))

    print(f"fixtures written to {OUT}")
    for p in sorted(OUT.iterdir()):
        print(f"  {p.name}: {p.stat().st_size} bytes")


if __name__ == "__main__":
    sys.exit(main())
