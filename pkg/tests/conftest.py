"""Shared fixtures. Scans are deterministic, so the expensive golden maps
are produced once per session and shared between module and acceptance
tests."""

import pytest

from cryoscan import calibration, scanning
from cryoscan.config import default_config


@pytest.fixture(scope="session")
def cfg():
    return default_config()


def run_preset(cfg, name, seed=None):
    preset = cfg.preset(name)
    inst = cfg.build_instrument(name)
    if seed is None:
        seed = (preset.noise or cfg.noise).seed
    return inst, scanning.execute(preset.plan, inst, seed=seed)


@pytest.fixture(scope="session")
def fig5_run(cfg):
    return run_preset(cfg, "fig5-screenplate")


@pytest.fixture(scope="session")
def fig7_runs(cfg):
    # two runs with independent noise seeds, as in the repeated cold scans
    inst_a, map_a = run_preset(cfg, "fig7-line", seed=11)
    inst_b, map_b = run_preset(cfg, "fig7-line", seed=22)
    return (inst_a, map_a), (inst_b, map_b)


@pytest.fixture(scope="session")
def distortion_runs(cfg):
    return run_preset(cfg, "distortion-edge"), run_preset(cfg, "distortion-edge-linear")


@pytest.fixture(scope="session")
def calib_run(cfg):
    return run_preset(cfg, "calib-3x3")


@pytest.fixture(scope="session")
def calib_model(cfg, calib_run):
    inst, m = calib_run
    blobs = calibration.detect_holes(m, cfg.preset("calib-3x3").threshold_frac)
    holes = [h.center for h in inst.mask.holes]
    return calibration.fit_mapping(blobs, holes)
