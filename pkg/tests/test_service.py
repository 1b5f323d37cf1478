import threading
import time

import pytest

from cryoscan.calibration import MappingModel
from cryoscan.scanning import plan_grid, plan_line
from cryoscan.service import BusyError, SessionService
from cryoscan.steering import InterlockError


@pytest.fixture()
def service(cfg):
    return SessionService(cfg, session_id="test")


SMALL_PLAN = plan_grid((0, 0.5), (0, 0.5), 3, 3)


class TestSteer:
    def test_rest_steer_predicts_origin(self, service):
        ack = service.steer(vx=0.0, vy=0.0)
        assert ack["predicted_mm"] == pytest.approx([0.0, 0.0], abs=1e-9)

    def test_physical_steer_requires_model(self, service):
        with pytest.raises(ValueError, match="calibration"):
            service.steer(to_mm=(1.0, 1.0))

    def test_physical_steer_matches_inversion(self, cfg, calib_model):
        from cryoscan.calibration import invert_mapping

        svc = SessionService(cfg, preset="calib-3x3", model=calib_model)
        target = (5.0, -3.0)
        ack = svc.steer(to_mm=target)
        want = invert_mapping(calib_model, target)
        assert ack["commanded"]["vx"] == pytest.approx(want.vx, abs=1e-3)
        assert ack["commanded"]["vy"] == pytest.approx(want.vy, abs=1e-3)

    def test_steer_during_scan_is_busy(self, cfg):
        svc = SessionService(cfg, session_id="busy")
        svc.run_scan(plan=plan_grid((0, 1), (0, 1), 21, 21))
        with pytest.raises(BusyError):
            svc.steer(vx=0.1, vy=0.1)
        svc.join()

    def test_interlock_bubbles_up(self, cfg):
        from dataclasses import replace
        from cryoscan.steering import ElectricalConfig, InstabilityRegion, VoltageCoord

        elec = ElectricalConfig(
            instability_regions=(InstabilityRegion(VoltageCoord(0.5, 0.5), 0.1),)
        )
        bad_cfg = replace(cfg, electrical=elec)
        svc = SessionService(bad_cfg, session_id="ilk")
        with pytest.raises(InterlockError):
            svc.steer(vx=0.5, vy=0.5)
        ack = svc.steer(vx=0.5, vy=0.5, override=True)
        assert ack["overridden"]


class TestEvents:
    def test_every_mutation_logged_once_with_monotone_time(self, service):
        service.steer(vx=0.2, vy=0.1)
        service.source_control(True, wavelength=650.0, power=1e-6)
        service.source_control(False)
        service.steer(vx=0.0, vy=0.0)
        events = service.events_since(0)
        kinds = [e.kind for e in events]
        assert kinds.count("steer") == 2
        assert kinds.count("source") == 2
        seqs = [e.seq for e in events]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
        times = [e.t for e in events]
        assert all(a <= b for a, b in zip(times, times[1:]))

    def test_source_hold_emits_samples(self, service):
        service.source_control(True, wavelength=650.0, power=1e-6, hold_s=5.0,
                               sample_every_s=1.0)
        samples = [e for e in service.events_since(0) if e.kind == "sample"]
        assert len(samples) >= 5

    def test_out_of_band_wavelength_rejected(self, service):
        with pytest.raises(ValueError):
            service.source_control(True, wavelength=2500.0, power=1e-6)

    def test_source_off_idempotent(self, service):
        a = service.source_control(False)
        b = service.source_control(False)
        assert a["on"] is False and b["on"] is False


class TestScans:
    def test_scan_lifecycle(self, cfg):
        svc = SessionService(cfg, session_id="life")
        handle = svc.run_scan(plan=SMALL_PLAN)
        svc.join()
        assert handle.state == "done"
        assert svc.state == "idle"
        m = svc.fetch_map(handle.scan_id)
        assert m.complete and len(m.samples) == 9

    def test_preset_scan_by_name(self, cfg):
        svc = SessionService(cfg, session_id="preset")
        handle = svc.run_scan(preset="fig7-line")
        svc.join()
        m = svc.fetch_map(handle.scan_id)
        assert m.plan.kind == "line"
        assert m.plan.n_points == 31

    def test_second_scan_while_running_is_busy(self, cfg):
        svc = SessionService(cfg, session_id="busy2")
        svc.run_scan(plan=plan_grid((0, 1), (0, 1), 21, 21))
        with pytest.raises(BusyError):
            svc.run_scan(plan=SMALL_PLAN)
        svc.join()

    def test_cancel_returns_partial_incomplete(self, cfg):
        svc = SessionService(cfg, session_id="cxl")
        handle = svc.run_scan(plan=plan_grid((0, 1), (0, 1), 31, 31))
        while handle.points_done < 10:
            time.sleep(0.005)
        svc.cancel_scan(handle.scan_id)
        assert handle.state == "cancelled"
        m = svc.fetch_map(handle.scan_id)
        assert not m.complete
        assert 0 < len(m.samples) < 31 * 31

    def test_fetch_before_completion_snapshots(self, cfg):
        svc = SessionService(cfg, session_id="snap")
        handle = svc.run_scan(plan=plan_grid((0, 1), (0, 1), 31, 31))
        while handle.points_done < 5:
            time.sleep(0.005)
        snap = svc.fetch_map(handle.scan_id)
        assert not snap.complete
        assert len(snap.samples) >= 5
        svc.join()
        done = svc.fetch_map(handle.scan_id)
        assert done.complete

    def test_unknown_scan_id(self, cfg):
        svc = SessionService(cfg, session_id="404")
        with pytest.raises(KeyError):
            svc.scan_status("scan-999")

    def test_status_reports_progress_fields(self, cfg):
        svc = SessionService(cfg, session_id="status")
        st = svc.status()
        assert st["state"] == "idle"
        assert st["config_hash"] == cfg.config_hash
        assert st["scan"] is None
        handle = svc.run_scan(plan=plan_grid((0, 1), (0, 1), 41, 41))
        st2 = svc.status()
        assert st2["state"] == "scanning"
        assert st2["scan"]["scan_id"] == handle.scan_id
        svc.cancel_scan(handle.scan_id)
        svc.join()
        st3 = svc.scan_status(handle.scan_id)
        assert st3["points_done"] > 0

    def test_concurrent_first_wins(self, cfg):
        svc = SessionService(cfg, session_id="race")
        wins, busy = [], []
        barrier = threading.Barrier(6)

        def try_scan():
            barrier.wait()
            try:
                wins.append(svc.run_scan(plan=plan_grid((0, 1), (0, 1), 41, 41)))
            except BusyError:
                busy.append(1)

        threads = [threading.Thread(target=try_scan) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        # exactly one of the simultaneous commands won the session
        assert len(wins) == 1
        assert len(busy) == 5
        svc.cancel_scan(wins[0].scan_id)
        svc.join()
