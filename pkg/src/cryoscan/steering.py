"""Electrical drive chain of the two-axis MEMS mirror.

Covers the normalized command coordinates, the four-channel differential
drive voltages, the capacitance-dependent voltage-to-tilt transfer, the
instability interlocks, slew-limited motion and energy/power accounting.

Conventions: voltages in volts, capacitances in farads, power in watts,
energy in joules, tilts in radians, times in seconds. Normalized commands
live in [-1, 1] per axis with [0, 0] the mechanical rest position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

__all__ = [
    "VoltageCoord",
    "DriveVoltages",
    "InstabilityRegion",
    "ElectricalConfig",
    "MirrorPose",
    "EnergyLedger",
    "MirrorState",
    "StabilityReport",
    "InterlockError",
    "saturation_gain",
    "saturation",
    "normalized_to_drive",
    "drive_to_normalized",
    "drive_to_tilt",
    "check_stability",
    "initial_state",
    "step_mirror",
    "power_report",
]


class InterlockError(RuntimeError):
    """A commanded move was rejected by the instability interlock."""

    def __init__(self, target, region):
        super().__init__(
            f"target [{target.vx:.4f}, {target.vy:.4f}] lies inside instability "
            f"region centered [{region.center.vx:.4f}, {region.center.vy:.4f}] "
            f"(radius {region.radius:.4f}); pass allow_unstable=True to override"
        )
        self.target = target
        self.region = region


@dataclass(frozen=True)
class VoltageCoord:
    """Normalized mirror command; both components must lie in [-1, 1]."""

    vx: float
    vy: float

    def __post_init__(self):
        for name, val in (("vx", self.vx), ("vy", self.vy)):
            if not (-1.0 <= val <= 1.0):
                raise ValueError(f"{name}={val!r} outside the normalized range [-1, 1]")

    @staticmethod
    def rest() -> "VoltageCoord":
        return VoltageCoord(0.0, 0.0)

    def distance(self, other: "VoltageCoord") -> float:
        return math.hypot(self.vx - other.vx, self.vy - other.vy)


@dataclass(frozen=True)
class DriveVoltages:
    """Four-channel drive, volts. Each channel must stay within [0, 180]."""

    x_plus: float
    x_minus: float
    y_plus: float
    y_minus: float

    V_MAX = 180.0

    def __post_init__(self):
        for name in ("x_plus", "x_minus", "y_plus", "y_minus"):
            v = getattr(self, name)
            if not (0.0 <= v <= self.V_MAX):
                raise ValueError(f"channel {name}={v!r} V outside [0, {self.V_MAX}] V")

    def channels(self) -> tuple:
        return (self.x_plus, self.x_minus, self.y_plus, self.y_minus)


@dataclass(frozen=True)
class InstabilityRegion:
    """Closed disc in voltage space where the mirror cannot hold position.

    The oscillation the mirror exhibits there is described by a linear path
    in the device plane (length in microns, angle in the device plane).
    """

    center: VoltageCoord
    radius: float
    path_length_um: float = 500.0
    path_angle_rad: float = 0.0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("instability region radius must be >= 0")

    def contains(self, v: VoltageCoord) -> bool:
        return v.distance(self.center) <= self.radius


@dataclass(frozen=True)
class ElectricalConfig:
    """Drive electronics parameters.

    The driver can charge up to ``driver_capacitance_limit`` per channel; the
    mirror itself presents ``mirror_capacitance``, so cabling beyond
    ``driver_capacitance_limit - mirror_capacitance`` (30 pF with defaults)
    compresses the response near the range edges. ``kappa0`` converts the
    excess-capacitance ratio into the tanh saturation gain.

    ``theta_max_x/y`` are the mechanical tilt limits reached at full-scale
    command; the defaults are tuned so the default optical layout spans a
    30 mm x 30 mm scan extent (see optics.default_layout).
    """

    driver_capacitance_limit: float = 50e-12
    mirror_capacitance: float = 20e-12
    cable_capacitance: float = 30e-12
    resting_power: float = 0.99e-6
    max_slew: float = 2.0                  # normalized units / s
    drive_sum_v: float = 180.0             # per-axis common-mode sum, volts
    kappa0: float = 0.5
    theta_max_x: float = 0.053217124454594
    theta_max_y: float = 0.053141926992867
    instability_regions: tuple = ()

    def __post_init__(self):
        if self.driver_capacitance_limit <= 0 or self.mirror_capacitance <= 0:
            raise ValueError("capacitances must be > 0")
        if self.cable_capacitance <= 0:
            raise ValueError("cable_capacitance must be > 0")
        if self.resting_power < 0:
            raise ValueError("resting_power must be >= 0")
        if self.max_slew <= 0:
            raise ValueError("max_slew must be > 0")
        if not (0.0 < self.drive_sum_v <= 2 * DriveVoltages.V_MAX):
            raise ValueError("drive_sum_v must be in (0, 360] V")
        if self.kappa0 < 0:
            raise ValueError("kappa0 must be >= 0")
        if self.theta_max_x <= 0 or self.theta_max_y <= 0:
            raise ValueError("theta_max must be > 0")
        object.__setattr__(self, "instability_regions", tuple(self.instability_regions))

    @property
    def excess_capacitance_ratio(self) -> float:
        budget = self.driver_capacitance_limit - self.mirror_capacitance
        return max(0.0, (self.cable_capacitance - budget) / self.mirror_capacitance)

    @property
    def kappa(self) -> float:
        return self.kappa0 * self.excess_capacitance_ratio


@dataclass(frozen=True)
class MirrorPose:
    """Mechanical tilt about the mirror's two orthogonal axes, radians."""

    tilt_x: float
    tilt_y: float


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    region: InstabilityRegion | None = None

    @property
    def path_length_um(self) -> float | None:
        return None if self.region is None else self.region.path_length_um


class EnergyLedger:
    """Append-only record of (time, cumulative energy) after each step.

    Shared by all MirrorState snapshots of one session; owned by whichever
    controller serializes the mutations.
    """

    def __init__(self):
        self._t = [0.0]
        self._e = [0.0]

    def append(self, t: float, e: float) -> None:
        self._t.append(t)
        self._e.append(e)

    def energy_at(self, t: float) -> float:
        """Cumulative energy at time t, linear within each step interval."""
        ts, es = self._t, self._e
        if t <= ts[0]:
            return es[0]
        if t >= ts[-1]:
            return es[-1]
        # binary search for the bracketing interval
        lo, hi = 0, len(ts) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ts[mid] <= t:
                lo = mid
            else:
                hi = mid
        if ts[hi] == ts[lo]:
            return es[hi]
        frac = (t - ts[lo]) / (ts[hi] - ts[lo])
        return es[lo] + frac * (es[hi] - es[lo])


@dataclass(frozen=True)
class MirrorState:
    """Snapshot of the commanded mirror, its pose and the session energy."""

    commanded: VoltageCoord
    pose: MirrorPose
    moving: bool
    energy_dissipated: float
    clock: float
    channel_energy: tuple = (0.0, 0.0, 0.0, 0.0)   # per-channel switching energy, J
    ledger: EnergyLedger = field(default_factory=EnergyLedger, compare=False)


def saturation_gain(cfg: ElectricalConfig) -> float:
    """Tanh gain kappa for the configured cabling; 0 means linear response."""
    return cfg.kappa


def saturation(v: float, kappa: float) -> float:
    """Normalized odd saturation law g(v; kappa) = tanh(kappa v)/tanh(kappa).

    Reduces exactly to the identity when kappa == 0 (cable budget respected).
    """
    if kappa == 0.0:
        return v
    return math.tanh(kappa * v) / math.tanh(kappa)


def saturation_inverse(w: float, kappa: float) -> float:
    if kappa == 0.0:
        return w
    w = max(-1.0, min(1.0, w))
    return math.atanh(w * math.tanh(kappa)) / kappa


def normalized_to_drive(v: VoltageCoord, cfg: ElectricalConfig) -> DriveVoltages:
    """Map a normalized command onto the four channel voltages.

    Per axis: plus = (S/2)(1 + v), minus = (S/2)(1 - v) with S the configured
    common-mode sum, so the differential is S*v and plus+minus stays constant.
    """
    half = cfg.drive_sum_v / 2.0
    return DriveVoltages(
        x_plus=half * (1.0 + v.vx),
        x_minus=half * (1.0 - v.vx),
        y_plus=half * (1.0 + v.vy),
        y_minus=half * (1.0 - v.vy),
    )


def drive_to_normalized(d: DriveVoltages, cfg: ElectricalConfig) -> VoltageCoord:
    """Recover the normalized command from channel voltages (exact inverse)."""
    return VoltageCoord(
        (d.x_plus - d.x_minus) / cfg.drive_sum_v,
        (d.y_plus - d.y_minus) / cfg.drive_sum_v,
    )


def drive_to_tilt(d: DriveVoltages, cfg: ElectricalConfig) -> MirrorPose:
    """Mechanical pose produced by a drive state.

    Per axis the tilt is theta_max * g(v; kappa) where v is the normalized
    differential and g the saturation law; excess cable capacitance raises
    kappa and compresses the response near the range edges.
    """
    v = drive_to_normalized(d, cfg)
    k = cfg.kappa
    return MirrorPose(
        tilt_x=cfg.theta_max_x * saturation(v.vx, k),
        tilt_y=cfg.theta_max_y * saturation(v.vy, k),
    )


def command_to_pose(v: VoltageCoord, cfg: ElectricalConfig) -> MirrorPose:
    """Full electrical chain: normalized command -> drive -> tilt."""
    return drive_to_tilt(normalized_to_drive(v, cfg), cfg)


def check_stability(v: VoltageCoord, cfg: ElectricalConfig) -> StabilityReport:
    """Report whether the mirror can hold position at v.

    Regions are closed discs: a command exactly on a boundary is unstable.
    """
    for region in cfg.instability_regions:
        if region.contains(v):
            return StabilityReport(stable=False, region=region)
    return StabilityReport(stable=True)


def initial_state(cfg: ElectricalConfig, at: VoltageCoord | None = None) -> MirrorState:
    v = at if at is not None else VoltageCoord.rest()
    return MirrorState(
        commanded=v,
        pose=command_to_pose(v, cfg),
        moving=False,
        energy_dissipated=0.0,
        clock=0.0,
    )


def _switching_energy(dv: float, capacitance: float) -> float:
    # standard capacitor-charging bound, 1/2 C dV^2 per channel transition
    return 0.5 * capacitance * dv * dv


def step_mirror(
    state: MirrorState,
    target: VoltageCoord,
    dt: float,
    cfg: ElectricalConfig,
    allow_unstable: bool = False,
) -> MirrorState:
    """Advance the mirror one time step toward target.

    The commanded coordinate moves along the straight line to the target at
    most ``cfg.max_slew`` normalized units per second. Dissipated energy
    accrues as resting_power*dt plus 1/2 C dV^2 for each channel transition
    this step. Targets inside an instability region raise InterlockError
    unless allow_unstable is set.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    report = check_stability(target, cfg)
    if not report.stable and not allow_unstable:
        raise InterlockError(target, report.region)

    dist = state.commanded.distance(target)
    max_step = cfg.max_slew * dt
    if dist <= max_step:
        new_cmd = target
    else:
        f = max_step / dist
        new_cmd = VoltageCoord(
            state.commanded.vx + f * (target.vx - state.commanded.vx),
            state.commanded.vy + f * (target.vy - state.commanded.vy),
        )

    old_drive = normalized_to_drive(state.commanded, cfg)
    new_drive = normalized_to_drive(new_cmd, cfg)
    ch_e = tuple(
        e + _switching_energy(nv - ov, cfg.mirror_capacitance)
        for e, ov, nv in zip(state.channel_energy, old_drive.channels(), new_drive.channels())
    )
    switching = sum(n - o for n, o in zip(ch_e, state.channel_energy))
    energy = state.energy_dissipated + cfg.resting_power * dt + switching
    clock = state.clock + dt
    state.ledger.append(clock, energy)
    return replace(
        state,
        commanded=new_cmd,
        pose=command_to_pose(new_cmd, cfg),
        moving=new_cmd != target,
        energy_dissipated=energy,
        clock=clock,
        channel_energy=ch_e,
    )


def power_report(state: MirrorState, window: float) -> float:
    """Average dissipated power over the trailing window of the session."""
    if window <= 0:
        raise ValueError("window must be > 0")
    if window > state.clock:
        raise ValueError(
            f"window {window} s exceeds elapsed session time {state.clock} s"
        )
    e0 = state.ledger.energy_at(state.clock - window)
    return (state.energy_dissipated - e0) / window
