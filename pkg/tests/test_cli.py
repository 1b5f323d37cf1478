import json

import pytest

from cryoscan.calibration import MappingModel, read_pgm, render_spot_image, write_pgm
from cryoscan.cli import main
from cryoscan.config import default_config
from cryoscan.device import save_mask
from cryoscan.optics import BeamSpot
from cryoscan.scanning import load_map


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(default_config().to_json())
    return str(path)


class TestSimulate:
    def test_fig7_preset_writes_map(self, tmp_path, config_path, capsys):
        out = tmp_path / "map.csv"
        rc = main(["simulate", "--config", config_path, "--preset", "fig7-line",
                   "--out", str(out), "--seed", "3"])
        assert rc == 0
        m = load_map(out)
        assert m.plan.kind == "line"
        assert m.seed == 3

    def test_unknown_preset_exit_2(self, config_path, tmp_path, capsys):
        rc = main(["simulate", "--config", config_path, "--preset", "nope",
                   "--out", str(tmp_path / "x.csv")])
        assert rc == 2

    def test_bad_config_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"nonsense": 1}')
        rc = main(["simulate", "--config", str(bad), "--preset", "fig7-line",
                   "--out", str(tmp_path / "x.csv")])
        assert rc == 2


class TestFitSpot:
    def test_fit_spot_json_output(self, tmp_path, capsys):
        img = render_spot_image(BeamSpot((0, 0), 42.5, 42.5, 0.0, 1.0, 650.0),
                                pixel_pitch=4.0, width=160, height=160)
        path = tmp_path / "spot.pgm"
        write_pgm(img, path)
        rc = main(["fit-spot", str(path), "--pitch-um", "4.0"])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["mean_diameter_um"] == pytest.approx(170.0, rel=0.01)

    def test_missing_file_exit_2(self, tmp_path):
        rc = main(["fit-spot", str(tmp_path / "none.pgm"), "--pitch-um", "4.0"])
        assert rc == 2


class TestCalibrateAndSteer:
    def test_full_cli_pipeline(self, tmp_path, config_path, capsys):
        cfg = default_config()
        map_path = tmp_path / "calib.csv"
        rc = main(["simulate", "--config", config_path, "--preset", "calib-3x3",
                   "--out", str(map_path)])
        assert rc == 0

        mask_path = tmp_path / "mask.txt"
        save_mask(cfg.preset("calib-3x3").mask, mask_path)
        model_path = tmp_path / "model.json"
        rc = main(["calibrate", str(map_path), "--mask", str(mask_path),
                   "--out", str(model_path)])
        assert rc == 0
        model = MappingModel.load(model_path)
        assert model.residual_rms < 0.1
        assert model.config_hash == cfg.config_hash

        capsys.readouterr()
        rc = main(["steer", "--model", str(model_path), "--to-mm", "5.0", "-3.0"])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert abs(out["vx"]) <= 1.0 and abs(out["vy"]) <= 1.0
        assert out["predicted_mm"][0] == pytest.approx(5.0, abs=1e-3)
        assert out["predicted_mm"][1] == pytest.approx(-3.0, abs=1e-3)

    def test_steer_out_of_range_exit_2(self, tmp_path, capsys):
        model = MappingModel(affine=((14.0, 0.0), (0.0, 14.0)), offset=(0.0, 0.0))
        path = tmp_path / "model.json"
        model.save(path)
        rc = main(["steer", "--model", str(path), "--to-mm", "100", "100"])
        assert rc == 2


class TestEmitConfig:
    def test_emitted_config_round_trips(self, tmp_path):
        out = tmp_path / "emitted.json"
        rc = main(["emit-config", "--out", str(out)])
        assert rc == 0
        from cryoscan.config import load_config
        assert load_config(out) == default_config()
