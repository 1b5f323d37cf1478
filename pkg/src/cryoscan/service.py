"""Session management over the simulated instrument stack.

One session owns one instrument. Mutations (steer, source, scan control)
are serialized by a command lock: the first client wins and concurrent
conflicting commands receive BusyError. Scans run on a worker thread with
cooperative cancellation at point boundaries; status reads never block.

Every mutation appends exactly one event {seq, t, kind, payload} to the
session log; the sequence number is the de-duplication key for stream
consumers and t is the simulated clock.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from . import scanning
from .calibration import MappingModel, invert_mapping
from .config import SystemConfig
from .steering import VoltageCoord, check_stability

__all__ = ["BusyError", "FaultError", "Event", "ScanHandle", "SessionService"]


class BusyError(RuntimeError):
    """The session is executing a conflicting command."""


class FaultError(RuntimeError):
    """The session entered the fault state and needs a reset."""


@dataclass(frozen=True)
class Event:
    seq: int
    t: float
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "t": self.t, "kind": self.kind, "payload": self.payload}


@dataclass
class ScanHandle:
    scan_id: str
    plan: scanning.ScanPlan
    state: str = "running"            # running | done | cancelled | fault
    points_done: int = 0
    points_total: int = 0
    latest: dict | None = None
    map: scanning.ResponseMap | None = None
    error: str | None = None
    _partial: list = field(default_factory=list)

    def progress(self) -> dict:
        return {
            "scan_id": self.scan_id,
            "state": self.state,
            "points_done": self.points_done,
            "points_total": self.points_total,
            "latest": self.latest,
            "error": self.error,
        }


class SessionService:
    """Command processor for one instrument session."""

    MAX_EVENTS = 100_000

    def __init__(self, config: SystemConfig, preset: str | None = None,
                 model: MappingModel | None = None, session_id: str = "default"):
        self.config = config
        self.session_id = session_id
        self.instrument = config.build_instrument(preset)
        self.model = model
        self.state = "idle"            # idle | scanning | fault
        self._cmd_lock = threading.Lock()
        self._events: list[Event] = []
        self._events_lock = threading.Lock()
        self._event_cv = threading.Condition(self._events_lock)
        self._seq = itertools.count(1)
        self._scans: dict[str, ScanHandle] = {}
        self._scan_counter = itertools.count(1)
        self._active_scan: ScanHandle | None = None
        self._abort_flag = threading.Event()
        self._worker: threading.Thread | None = None
        self._emit("session", {"session_id": session_id, "config_hash": config.config_hash})

    # -- events ---------------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> Event:
        with self._events_lock:
            ev = Event(seq=next(self._seq), t=self.instrument.clock, kind=kind,
                       payload=payload)
            self._events.append(ev)
            if len(self._events) > self.MAX_EVENTS:
                del self._events[: len(self._events) // 2]
            self._event_cv.notify_all()
        return ev

    def events_since(self, seq: int) -> list[Event]:
        with self._events_lock:
            return [e for e in self._events if e.seq > seq]

    def wait_events(self, seq: int, timeout: float = 5.0) -> list[Event]:
        """Events after seq, blocking up to timeout if none are pending."""
        with self._event_cv:
            evs = [e for e in self._events if e.seq > seq]
            if evs:
                return evs
            self._event_cv.wait(timeout)
            return [e for e in self._events if e.seq > seq]

    # -- status -----------------------------------------------------------------

    def status(self) -> dict:
        inst = self.instrument
        pos = inst.predicted_position()
        with self._events_lock:
            seq = self._events[-1].seq if self._events else 0
        active = self._active_scan.progress() if self._active_scan else None
        return {
            "session_id": self.session_id,
            "state": self.state,
            "config_hash": self.config.config_hash,
            "clock_s": inst.clock,
            "mirror": {
                "vx": inst.mirror.commanded.vx,
                "vy": inst.mirror.commanded.vy,
                "moving": inst.mirror.moving,
                "tilt_x_rad": inst.mirror.pose.tilt_x,
                "tilt_y_rad": inst.mirror.pose.tilt_y,
            },
            "predicted_mm": list(pos) if pos is not None else None,
            "source": {
                "on": inst.source_on,
                "wavelength_nm": inst.source_wavelength,
                "power_w": inst.source_power,
            },
            "energy_j": inst.mirror.energy_dissipated,
            "s21": inst.measure_s21(),
            "calibrated": self.model is not None,
            "scan": active,
            "seq": seq,
            "instability_regions": [
                {
                    "vx": r.center.vx, "vy": r.center.vy, "radius": r.radius,
                    "path_length_um": r.path_length_um,
                }
                for r in inst.electrical.instability_regions
            ],
        }

    # -- commands ---------------------------------------------------------------

    def _command(self):
        if self.state == "fault":
            raise FaultError("session is in the fault state")
        if not self._cmd_lock.acquire(blocking=False):
            raise BusyError("session is executing another command")
        return self._cmd_lock

    def steer(self, vx: float | None = None, vy: float | None = None,
              to_mm=None, override: bool = False) -> dict:
        """Steer to a voltage coordinate, or to a physical target through the
        loaded calibration. Returns the ack with the predicted position."""
        if self.state == "scanning":
            raise BusyError("session is scanning")
        lock = self._command()
        try:
            if to_mm is not None:
                if self.model is None:
                    raise ValueError("physical steering requires a loaded calibration model")
                target = invert_mapping(self.model, to_mm)
            else:
                if vx is None or vy is None:
                    raise ValueError("steer needs either (vx, vy) or to_mm")
                target = VoltageCoord(vx, vy)
            report = check_stability(target, self.instrument.electrical)
            duration = self.instrument.slew_to(target, allow_unstable=override)
            pos = self.instrument.predicted_position()
            ack = {
                "commanded": {"vx": target.vx, "vy": target.vy},
                "predicted_mm": list(pos) if pos is not None else None,
                "slew_s": duration,
                "stable": report.stable,
                "overridden": bool(override and not report.stable),
                "s21": self.instrument.measure_s21(),
            }
            self._emit("steer", ack)
            return ack
        finally:
            lock.release()

    def source_control(self, on: bool, wavelength: float | None = None,
                       power: float | None = None, hold_s: float = 0.0,
                       sample_every_s: float = 1.0) -> dict:
        """Switch the source; optionally hold for hold_s seconds of simulated
        time, emitting an s21 sample event at the given cadence."""
        if self.state == "scanning":
            raise BusyError("session is scanning")
        lock = self._command()
        try:
            self.instrument.set_source(on, wavelength, power)
            ack = {
                "on": self.instrument.source_on,
                "wavelength_nm": self.instrument.source_wavelength,
                "power_w": self.instrument.source_power,
            }
            self._emit("source", ack)
            self._emit_sample()
            if hold_s > 0:
                steps = max(1, int(round(hold_s / max(sample_every_s, 1e-6))))
                dt = hold_s / steps
                for _ in range(steps):
                    self.instrument.advance(dt)
                    self._emit_sample()
            return ack
        finally:
            lock.release()

    def _emit_sample(self):
        inst = self.instrument
        s21 = inst.measure_s21()
        baseline = inst.device_state().baseline_s21
        self._emit("sample", {
            "s21": s21,
            "delta": s21 - baseline,
            "source_on": inst.source_on,
            "vx": inst.mirror.commanded.vx,
            "vy": inst.mirror.commanded.vy,
        })

    # -- scans ------------------------------------------------------------------

    def run_scan(self, plan: scanning.ScanPlan | None = None,
                 preset: str | None = None, seed: int | None = None) -> ScanHandle:
        """Start a scan on the worker thread; returns its handle."""
        if plan is None:
            if preset is None:
                raise ValueError("run_scan needs a plan or a preset name")
            plan = self.config.preset(preset).plan
        if seed is None:
            seed = self.instrument.noise.seed
        lock = self._command()
        try:
            if self.state != "idle":
                raise BusyError(f"session is {self.state}")
            scan_id = f"scan-{next(self._scan_counter)}"
            handle = ScanHandle(scan_id=scan_id, plan=plan,
                                points_total=plan.total_points())
            self._scans[scan_id] = handle
            self._active_scan = handle
            self.state = "scanning"
            self._abort_flag.clear()
            self._emit("scan_started", {"scan_id": scan_id, "points": plan.total_points(),
                                        "seed": seed})

            def work():
                try:
                    result = scanning.execute(
                        plan, self.instrument, seed=seed,
                        on_sample=lambda s, done, total: self._on_scan_sample(handle, s, done, total),
                        should_abort=self._abort_flag.is_set,
                    )
                    handle.map = result
                    handle.state = "done" if result.complete else "cancelled"
                    self.state = "idle"
                    self._emit("scan_done", {"scan_id": scan_id,
                                             "complete": result.complete,
                                             "points": len(result.samples)})
                except Exception as exc:   # noqa: BLE001 - fault isolation boundary
                    handle.state = "fault"
                    handle.error = str(exc)
                    self.state = "fault"
                    self._emit("fault", {"scan_id": scan_id, "error": str(exc)})
                finally:
                    self._active_scan = None

            self._worker = threading.Thread(target=work, name=f"cryoscan-{scan_id}", daemon=True)
            self._worker.start()
            return handle
        finally:
            lock.release()

    def _on_scan_sample(self, handle: ScanHandle, sample, done, total):
        handle.points_done = done
        handle.latest = {
            "ix": sample.ix, "iy": sample.iy,
            "vx": sample.v.vx, "vy": sample.v.vy,
            "delta": None if sample.delta != sample.delta else sample.delta,
            "flags": sorted(sample.flags),
        }
        handle._partial.append(sample)
        self._emit("scan_progress", {
            "scan_id": handle.scan_id, "done": done, "total": total,
            "sample": handle.latest,
        })

    def scan_status(self, scan_id: str) -> dict:
        return self._handle(scan_id).progress()

    def fetch_map(self, scan_id: str) -> scanning.ResponseMap:
        """The finished map, or a snapshot of the completed points."""
        handle = self._handle(scan_id)
        if handle.map is not None:
            return handle.map
        return scanning.ResponseMap(
            plan=handle.plan,
            samples=tuple(handle._partial),
            config_hash=self.config.config_hash,
            seed=0,
            session_id=self.session_id,
            created_s=self.instrument.clock,
            complete=False,
        )

    def cancel_scan(self, scan_id: str) -> dict:
        handle = self._handle(scan_id)
        if handle.state == "running":
            self._abort_flag.set()
            if self._worker is not None:
                self._worker.join(timeout=60.0)
        return handle.progress()

    def _handle(self, scan_id: str) -> ScanHandle:
        if scan_id not in self._scans:
            raise KeyError(f"unknown scan id {scan_id!r}")
        return self._scans[scan_id]

    def join(self, timeout: float | None = None):
        if self._worker is not None:
            self._worker.join(timeout)
