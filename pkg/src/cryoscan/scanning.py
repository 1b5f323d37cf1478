"""Scan plans, simulated execution, response-map persistence and
repeatability metrics.

Response maps serialize to UTF-8 CSV with a ``# key: value`` header block
(plan, config hash, seed, session id) followed by the sample rows
``ix,iy,vx,vy,s21_off,s21_on,delta,t,flags``. Floats are written with
``repr`` so a round trip is lossless; flags are semicolon-joined tokens.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .instrument import Instrument
from .steering import VoltageCoord, check_stability

__all__ = [
    "ScanPlan",
    "ResponseSample",
    "ResponseMap",
    "RepeatabilityMetrics",
    "MapParseError",
    "plan_grid",
    "plan_line",
    "execute",
    "save_map",
    "load_map",
    "repeatability",
    "line_step_location",
]

FLAG_TOKENS = ("unstable", "missed_plane", "overridden")


class MapParseError(ValueError):
    """Malformed response-map file; carries the offending line and column."""

    def __init__(self, path, line_no, col, message):
        super().__init__(f"{path}:{line_no}:{col}: {message}")
        self.path = str(path)
        self.line_no = line_no
        self.col = col


@dataclass(frozen=True)
class ScanPlan:
    """Grid or line scan over voltage space with dwell/relax timing."""

    kind: str                       # "grid" | "line"
    vx_lo: float = 0.0
    vx_hi: float = 0.0
    vy_lo: float = 0.0
    vy_hi: float = 0.0
    nx: int = 0
    ny: int = 0
    start: tuple = (0.0, 0.0)
    end: tuple = (0.0, 0.0)
    n_points: int = 0
    dwell_on: float = 1.0
    dwell_off: float = 0.0
    settle: float = 0.1
    relax_wait: float = 20.0
    source_wavelength: float = 650.0
    source_power: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("grid", "line"):
            raise ValueError(f"plan kind must be 'grid' or 'line', got {self.kind!r}")
        for name in ("dwell_on", "dwell_off", "settle", "relax_wait"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.source_power < 0:
            raise ValueError("source_power must be >= 0")
        if self.kind == "grid":
            for lo, hi, n, ax in (
                (self.vx_lo, self.vx_hi, self.nx, "x"),
                (self.vy_lo, self.vy_hi, self.ny, "y"),
            ):
                if n < 2:
                    raise ValueError(f"grid needs >= 2 points per axis (n{ax}={n})")
                if not (-1.0 <= lo <= 1.0 and -1.0 <= hi <= 1.0):
                    raise ValueError(f"{ax} range [{lo}, {hi}] outside [-1, 1]")
                if lo >= hi:
                    raise ValueError(f"degenerate {ax} range [{lo}, {hi}]")
        else:
            if self.n_points < 2:
                raise ValueError("line needs >= 2 points")
            s, e = VoltageCoord(*self.start), VoltageCoord(*self.end)
            if s == e:
                raise ValueError("degenerate line: start equals end")

    def total_points(self) -> int:
        return self.nx * self.ny if self.kind == "grid" else self.n_points

    def points(self):
        """Yield (ix, iy, VoltageCoord) in row-major (iy, ix) order.

        Grid points sit at exactly linear increments including both
        endpoints; line points are equally spaced start..end inclusive.
        """
        if self.kind == "grid":
            for iy in range(self.ny):
                vy = self.vy_lo + (self.vy_hi - self.vy_lo) * iy / (self.ny - 1)
                for ix in range(self.nx):
                    vx = self.vx_lo + (self.vx_hi - self.vx_lo) * ix / (self.nx - 1)
                    yield ix, iy, VoltageCoord(vx, vy)
        else:
            for i in range(self.n_points):
                f = i / (self.n_points - 1)
                yield i, 0, VoltageCoord(
                    self.start[0] + (self.end[0] - self.start[0]) * f,
                    self.start[1] + (self.end[1] - self.start[1]) * f,
                )


def plan_grid(vx_range, vy_range, nx, ny, *, dwell_on=1.0, dwell_off=0.0,
              settle=0.1, relax_wait=20.0, source_wavelength=650.0,
              source_power=1e-6) -> ScanPlan:
    return ScanPlan(
        kind="grid",
        vx_lo=float(vx_range[0]), vx_hi=float(vx_range[1]),
        vy_lo=float(vy_range[0]), vy_hi=float(vy_range[1]),
        nx=int(nx), ny=int(ny),
        dwell_on=dwell_on, dwell_off=dwell_off, settle=settle,
        relax_wait=relax_wait, source_wavelength=source_wavelength,
        source_power=source_power,
    )


def plan_line(start, end, n, *, dwell_on=1.0, dwell_off=0.0, settle=0.1,
              relax_wait=20.0, source_wavelength=650.0,
              source_power=1e-6) -> ScanPlan:
    s, e = VoltageCoord(*start), VoltageCoord(*end)
    return ScanPlan(
        kind="line",
        start=(s.vx, s.vy), end=(e.vx, e.vy), n_points=int(n),
        dwell_on=dwell_on, dwell_off=dwell_off, settle=settle,
        relax_wait=relax_wait, source_wavelength=source_wavelength,
        source_power=source_power,
    )


@dataclass(frozen=True)
class ResponseSample:
    ix: int
    iy: int
    v: VoltageCoord
    s21_off: float
    s21_on: float
    delta: float
    timestamp: float
    flags: frozenset = frozenset()


@dataclass(frozen=True)
class ResponseMap:
    plan: ScanPlan
    samples: tuple
    config_hash: str
    seed: int
    session_id: str
    created_s: float
    complete: bool = True

    def __post_init__(self):
        if self.complete and len(self.samples) != self.plan.total_points():
            raise ValueError(
                f"sample count {len(self.samples)} != plan point count "
                f"{self.plan.total_points()}"
            )

    def deltas_grid(self) -> np.ndarray:
        """Delta values reshaped to (ny, nx); grid plans only."""
        if self.plan.kind != "grid":
            raise ValueError("deltas_grid applies to grid plans")
        arr = np.full((self.plan.ny, self.plan.nx), np.nan)
        for s in self.samples:
            arr[s.iy, s.ix] = s.delta
        return arr


def _session_id(config_hash: str, plan: ScanPlan, seed: int) -> str:
    text = f"{config_hash}|{plan!r}|{seed}"
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def execute(
    plan: ScanPlan,
    system: Instrument,
    seed: int = 0,
    allow_unstable: bool = False,
    on_sample=None,
    should_abort=None,
) -> ResponseMap:
    """Run a scan plan against the simulated stack.

    Per point: slew, settle, record s21_off, switch the source on for
    dwell_on, record s21_on, switch off and advance by relax_wait. Points
    inside an instability region are skipped (NaN sample, 'unstable' flag)
    unless allow_unstable is set, in which case they are measured and
    flagged 'overridden' as well. Deterministic for a fixed seed.

    ``should_abort()`` is polled at point boundaries; an aborted run returns
    the completed points marked incomplete.
    """
    rng = np.random.default_rng(seed)
    samples = []
    aborted = False
    total = plan.total_points()
    for ix, iy, v in plan.points():
        if should_abort is not None and should_abort():
            aborted = True
            break
        flags = set()
        report = check_stability(v, system.electrical)
        if not report.stable:
            flags.add("unstable")
            if not allow_unstable:
                sample = ResponseSample(
                    ix, iy, v, math.nan, math.nan, math.nan,
                    timestamp=system.clock, flags=frozenset(flags),
                )
                samples.append(sample)
                if on_sample is not None:
                    on_sample(sample, len(samples), total)
                continue
            flags.add("overridden")

        system.slew_to(v, allow_unstable=allow_unstable)
        system.advance(plan.settle)
        if plan.dwell_off > 0:
            system.advance(plan.dwell_off)
        t_meas = system.clock
        s21_off = system.measure_s21(rng)
        system.set_source(True, plan.source_wavelength, plan.source_power)
        if system.beam_missed:
            flags.add("missed_plane")
        system.advance(plan.dwell_on)
        s21_on = system.measure_s21(rng)
        system.set_source(False)
        system.advance(plan.relax_wait)
        sample = ResponseSample(
            ix, iy, v, s21_off, s21_on, s21_on - s21_off,
            timestamp=t_meas, flags=frozenset(flags),
        )
        samples.append(sample)
        if on_sample is not None:
            on_sample(sample, len(samples), total)

    return ResponseMap(
        plan=plan,
        samples=tuple(samples),
        config_hash=system.config_hash,
        seed=seed,
        session_id=_session_id(system.config_hash, plan, seed),
        created_s=system.clock,
        complete=not aborted,
    )


# -- persistence ---------------------------------------------------------------

_FORMAT_LINE = "# cryoscan-response-map: 1"
_COLUMNS = "ix,iy,vx,vy,s21_off,s21_on,delta,t,flags"


def _plan_header(plan: ScanPlan) -> list:
    lines = [f"# kind: {plan.kind}"]
    if plan.kind == "grid":
        lines += [
            f"# vx_lo: {plan.vx_lo!r}",
            f"# vx_hi: {plan.vx_hi!r}",
            f"# vy_lo: {plan.vy_lo!r}",
            f"# vy_hi: {plan.vy_hi!r}",
            f"# nx: {plan.nx}",
            f"# ny: {plan.ny}",
        ]
    else:
        lines += [
            f"# start: {plan.start[0]!r},{plan.start[1]!r}",
            f"# end: {plan.end[0]!r},{plan.end[1]!r}",
            f"# n_points: {plan.n_points}",
        ]
    lines += [
        f"# dwell_on_s: {plan.dwell_on!r}",
        f"# dwell_off_s: {plan.dwell_off!r}",
        f"# settle_s: {plan.settle!r}",
        f"# relax_wait_s: {plan.relax_wait!r}",
        f"# wavelength_nm: {plan.source_wavelength!r}",
        f"# power_w: {plan.source_power!r}",
    ]
    return lines


def map_to_csv(m: ResponseMap) -> str:
    lines = [
        _FORMAT_LINE,
        f"# session: {m.session_id}",
        f"# config: {m.config_hash}",
        f"# seed: {m.seed}",
        f"# created_s: {m.created_s!r}",
        f"# complete: {'true' if m.complete else 'false'}",
    ]
    lines += _plan_header(m.plan)
    lines.append(_COLUMNS)
    for s in m.samples:
        flags = ";".join(t for t in FLAG_TOKENS if t in s.flags)
        lines.append(
            f"{s.ix},{s.iy},{s.v.vx!r},{s.v.vy!r},{s.s21_off!r},{s.s21_on!r},"
            f"{s.delta!r},{s.timestamp!r},{flags}"
        )
    return "\n".join(lines) + "\n"


def save_map(m: ResponseMap, path) -> None:
    Path(path).write_text(map_to_csv(m), encoding="utf-8", newline="\n")


def _parse_header_value(headers, key, convert, path, required=True):
    if key not in headers:
        if required:
            raise MapParseError(path, headers.get("_last_line", 1), 1, f"missing header '{key}'")
        return None
    raw, line_no = headers[key]
    try:
        return convert(raw)
    except (ValueError, TypeError):
        raise MapParseError(path, line_no, 1, f"bad value for '{key}': {raw!r}") from None


def load_map(path) -> ResponseMap:
    """Parse and validate a response-map CSV; lossless inverse of save_map."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != _FORMAT_LINE:
        raise MapParseError(path, 1, 1, "not a cryoscan response map (bad format line)")

    headers = {}
    row_start = None
    for i, line in enumerate(lines[1:], start=2):
        if line.startswith("# "):
            body = line[2:]
            if ": " not in body:
                raise MapParseError(path, i, 3, "header line without 'key: value'")
            key, val = body.split(": ", 1)
            headers[key] = (val, i)
        elif line == _COLUMNS:
            row_start = i + 1
            break
        else:
            raise MapParseError(path, i, 1, f"unexpected line before column header: {line!r}")
    if row_start is None:
        raise MapParseError(path, len(lines), 1, "missing column header row")

    h = lambda key, conv, req=True: _parse_header_value(headers, key, conv, path, req)
    kind = h("kind", str)
    common = dict(
        dwell_on=h("dwell_on_s", float),
        dwell_off=h("dwell_off_s", float),
        settle=h("settle_s", float),
        relax_wait=h("relax_wait_s", float),
        source_wavelength=h("wavelength_nm", float),
        source_power=h("power_w", float),
    )
    try:
        if kind == "grid":
            plan = ScanPlan(
                kind="grid",
                vx_lo=h("vx_lo", float), vx_hi=h("vx_hi", float),
                vy_lo=h("vy_lo", float), vy_hi=h("vy_hi", float),
                nx=h("nx", int), ny=h("ny", int), **common,
            )
        elif kind == "line":
            start = h("start", lambda s: tuple(float(x) for x in s.split(",")))
            end = h("end", lambda s: tuple(float(x) for x in s.split(",")))
            plan = ScanPlan(kind="line", start=start, end=end,
                            n_points=h("n_points", int), **common)
        else:
            raise MapParseError(path, headers["kind"][1], 1, f"unknown plan kind {kind!r}")
    except ValueError as exc:
        raise MapParseError(path, 1, 1, f"invalid plan in header: {exc}") from None

    complete = h("complete", lambda s: {"true": True, "false": False}[s])
    samples = []
    for i, line in enumerate(lines[row_start - 1:], start=row_start):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 9:
            raise MapParseError(path, i, 1, f"expected 9 fields, got {len(fields)}")
        col = 1

        def conv(field, fn, col_idx):
            try:
                return fn(field)
            except ValueError:
                raise MapParseError(
                    path, i, sum(len(f) + 1 for f in fields[:col_idx]) + 1,
                    f"bad field {field!r}",
                ) from None

        ix = conv(fields[0], int, 0)
        iy = conv(fields[1], int, 1)
        vx = conv(fields[2], float, 2)
        vy = conv(fields[3], float, 3)
        s_off = conv(fields[4], float, 4)
        s_on = conv(fields[5], float, 5)
        delta = conv(fields[6], float, 6)
        t = conv(fields[7], float, 7)
        flag_field = fields[8]
        flags = set()
        if flag_field:
            for tok in flag_field.split(";"):
                if tok not in FLAG_TOKENS:
                    raise MapParseError(
                        path, i, sum(len(f) + 1 for f in fields[:8]) + 1,
                        f"unknown flag {tok!r}",
                    )
                flags.add(tok)
        consistent = (delta == s_on - s_off) or (
            math.isnan(delta) and math.isnan(s_on) and math.isnan(s_off)
        )
        if not consistent:
            raise MapParseError(path, i, 1, "delta != s21_on - s21_off")
        samples.append(ResponseSample(
            ix, iy, VoltageCoord(vx, vy), s_off, s_on, delta, t, frozenset(flags)
        ))

    plan_total = plan.total_points()
    if complete and len(samples) != plan_total:
        raise MapParseError(
            path, len(lines), 1,
            f"sample count {len(samples)} does not match plan point count {plan_total}",
        )
    return ResponseMap(
        plan=plan,
        samples=tuple(samples),
        config_hash=h("config", str),
        seed=h("seed", int),
        session_id=h("session", str),
        created_s=h("created_s", float),
        complete=complete,
    )


# -- repeatability -------------------------------------------------------------

@dataclass(frozen=True)
class RepeatabilityMetrics:
    step_offset: float | None       # voltage units along the line; None for grids
    rms_delta_diff: float
    peak_corr: float


def line_step_location(m: ResponseMap) -> tuple:
    """Arc position (voltage units) and coordinate of the steepest delta step.

    The step is the midpoint between the two samples with the largest
    absolute discrete gradient along the line.
    """
    if m.plan.kind != "line":
        raise ValueError("step detection applies to line scans")
    pts = [s for s in m.samples if not math.isnan(s.delta)]
    if len(pts) < 2:
        raise ValueError("need at least two valid samples")
    start = VoltageCoord(*m.plan.start)
    arcs = [start.distance(s.v) for s in pts]
    grads = [abs(pts[k + 1].delta - pts[k].delta) for k in range(len(pts) - 1)]
    k = int(np.argmax(grads))
    s_mid = 0.5 * (arcs[k] + arcs[k + 1])
    coord = VoltageCoord(
        0.5 * (pts[k].v.vx + pts[k + 1].v.vx),
        0.5 * (pts[k].v.vy + pts[k + 1].v.vy),
    )
    return s_mid, coord


def repeatability(a: ResponseMap, b: ResponseMap) -> RepeatabilityMetrics:
    """Compare two runs of the same plan.

    step_offset: difference of detected step arc-positions (line plans);
    rms_delta_diff: RMS of per-sample delta differences;
    peak_corr: peak of the normalized cross-correlation of the two delta
    sequences (undefined, and an error, for zero-variance maps).
    """
    if a.plan != b.plan:
        raise ValueError("repeatability requires identical plans")
    da = np.array([s.delta for s in a.samples])
    db = np.array([s.delta for s in b.samples])
    ok = ~(np.isnan(da) | np.isnan(db))
    if not ok.any():
        raise ValueError("no overlapping valid samples")
    da, db = da[ok], db[ok]
    rms = float(np.sqrt(np.mean((da - db) ** 2)))

    xa = da - da.mean()
    xb = db - db.mean()
    na, nb = float(np.linalg.norm(xa)), float(np.linalg.norm(xb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cross-correlation undefined for a constant map")
    corr = float(np.max(np.correlate(xa, xb, mode="full")) / (na * nb))

    offset = None
    if a.plan.kind == "line":
        sa, _ = line_step_location(a)
        sb, _ = line_step_location(b)
        offset = sa - sb
    return RepeatabilityMetrics(step_offset=offset, rms_delta_diff=rms, peak_corr=corr)
