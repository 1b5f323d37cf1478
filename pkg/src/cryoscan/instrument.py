"""Composed digital twin: drive chain + beam path + mask + MKID.

Owns the simulated clock (the mirror session clock), the source state and
the device thermal state. All time is simulated; nothing sleeps.

Thermal bookkeeping: while the source is off the chip load decays with the
MKID relaxation time; while the source is on the photon drive dominates and
the pre-existing load is held (no decay), which keeps source-on minus
source-off transmission differences non-negative at the baseline readout
tone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import device as dev
from . import optics, steering

__all__ = ["NoiseModel", "Illumination", "Instrument"]


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise on S21 readings; both terms default off."""

    seed: int = 0
    s21_additive_sigma: float = 0.0
    s21_multiplicative_frac: float = 0.0

    def __post_init__(self):
        if self.s21_additive_sigma < 0 or self.s21_multiplicative_frac < 0:
            raise ValueError("noise terms must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.s21_additive_sigma > 0 or self.s21_multiplicative_frac > 0


@dataclass(frozen=True)
class Illumination:
    """Where the beam landed and how its power divided for one command."""

    position: tuple | None          # (u, v) mm on the device plane, None if missed
    spot: optics.BeamSpot | None
    through: float
    blocked: float
    background: float
    missed: bool

    @property
    def absorbed(self) -> float:
        return self.through + self.background


class Instrument:
    """Single-session simulated instrument stack.

    Not thread safe by itself: the owning service serializes mutations and
    hands out read-only snapshots.
    """

    def __init__(
        self,
        electrical: steering.ElectricalConfig,
        layout: optics.OpticalLayout,
        spot: optics.SpotModelConfig,
        mkid: dev.MkidParams,
        mask: dev.MaskPattern,
        background: dev.BackgroundModel,
        noise: NoiseModel | None = None,
        config_hash: str = "unconfigured",
    ):
        self.electrical = electrical
        self.layout = layout
        self.spot_cfg = spot
        self.mkid = mkid
        self.mask = mask
        self.background = background
        self.noise = noise or NoiseModel()
        self.config_hash = config_hash

        self.mirror = steering.initial_state(electrical)
        self.source_on = False
        self.source_wavelength = spot.design_wavelength
        self.source_power = 0.0
        self._residual = 0.0        # decaying chip load, W
        self._illum = _DARK         # current illumination while source on
        self._residual_t = 0.0      # clock at which _residual was valid

    # -- clock / motion ------------------------------------------------------

    @property
    def clock(self) -> float:
        return self.mirror.clock

    def chain(self, vx: float, vy: float) -> steering.MirrorPose:
        """Voltage command -> mechanical pose (the full electrical chain)."""
        return steering.command_to_pose(steering.VoltageCoord(vx, vy), self.electrical)

    def advance(self, dt: float) -> None:
        """Let simulated time pass with the mirror holding position."""
        if dt < 0:
            raise ValueError("dt must be >= 0")
        if dt == 0:
            return
        self.mirror = steering.step_mirror(
            self.mirror, self.mirror.commanded, dt, self.electrical, allow_unstable=True
        )
        self._sync_thermal()

    def slew_to(self, target: steering.VoltageCoord, allow_unstable: bool = False) -> float:
        """Move to a command at the configured slew rate; returns the duration."""
        dist = self.mirror.commanded.distance(target)
        if dist == 0.0:
            # the interlock still applies to a rejected hold-in-place command
            report = steering.check_stability(target, self.electrical)
            if not report.stable and not allow_unstable:
                raise steering.InterlockError(target, report.region)
            return 0.0
        dt = dist / self.electrical.max_slew
        self.mirror = steering.step_mirror(
            self.mirror, target, dt, self.electrical, allow_unstable=allow_unstable
        )
        self._sync_thermal()
        if self.source_on:
            self._illum = self.illuminate(self.mirror.commanded)
        return dt

    # -- beam / device -------------------------------------------------------

    def predicted_position(self) -> tuple | None:
        """Traced device-plane landing point of the current pose, or None."""
        try:
            return optics.trace_to_device(self.mirror.pose, self.layout)
        except optics.TraceMissError:
            return None

    def illuminate(self, v: steering.VoltageCoord) -> Illumination:
        """Power split for the beam steered to v at the current source."""
        if not self.source_on or self.source_power <= 0.0:
            return _DARK
        try:
            pos = optics.trace_to_device(
                steering.command_to_pose(v, self.electrical), self.layout
            )
        except optics.TraceMissError:
            return Illumination(None, None, 0.0, 0.0, 0.0, missed=True)
        spot = optics.spot_profile(pos, self.source_wavelength, self.spot_cfg, self.source_power)
        if self.mask.kind == "open":
            # the open configuration exposes only the active region; the rest
            # of the beam hits the housing and feeds the reflection background
            if self.layout.device_plane.contains(*pos):
                through, blocked = spot.total_power, 0.0
            else:
                through, blocked = 0.0, spot.total_power
        else:
            through, blocked = dev.masked_power(spot, self.mask)
        bg = dev.background_power(blocked, v, self.background)
        return Illumination(pos, spot, through, blocked, bg, missed=False)

    def set_source(self, on: bool, wavelength: float | None = None, power: float | None = None) -> None:
        """Switch the light source; wavelength must sit in the system band."""
        if wavelength is not None:
            if not (optics.BAND_MIN_NM <= wavelength <= optics.BAND_MAX_NM):
                raise ValueError(
                    f"wavelength {wavelength} nm outside system band "
                    f"[{optics.BAND_MIN_NM:.0f}, {optics.BAND_MAX_NM:.0f}] nm"
                )
            self.source_wavelength = wavelength
        if power is not None:
            if power < 0:
                raise ValueError("source power must be >= 0")
            self.source_power = power
        self._sync_thermal()
        if on:
            self.source_on = True
            self._illum = self.illuminate(self.mirror.commanded)
        elif self.source_on:
            # the accumulated load starts relaxing from here
            self._residual += self._illum.absorbed
            self._residual_t = self.clock
            self._illum = _DARK
            self.source_on = False

    def _sync_thermal(self) -> None:
        # the residual load decays only while the source is off; under
        # illumination the photon drive holds the chip at its loaded state
        dt = self.clock - self._residual_t
        if dt > 0:
            if not self.source_on:
                self._residual *= math.exp(-dt / self.mkid.relax_tau)
            self._residual_t = self.clock

    @property
    def beam_missed(self) -> bool:
        """True when the source is on but the traced beam missed a surface."""
        return self._illum.missed

    @property
    def absorbed_power(self) -> float:
        self._sync_thermal()
        return self._residual + self._illum.absorbed

    def device_state(self) -> dev.DeviceState:
        return dev.DeviceState(
            absorbed_power=self.absorbed_power,
            time=self.clock,
            baseline_s21=dev.s21_magnitude(self.mkid.readout_freq, self.mkid, 0.0),
        )

    def measure_s21(self, rng=None) -> float:
        """S21 magnitude at the readout tone, with optional measurement noise.

        Noise is multiplicative then additive, clipped into [0, 1]; pass the
        scan's seeded generator for reproducible sequences.
        """
        s = dev.s21_magnitude(self.mkid.readout_freq, self.mkid, self.absorbed_power)
        if rng is not None and self.noise.enabled:
            if self.noise.s21_multiplicative_frac > 0:
                s *= 1.0 + self.noise.s21_multiplicative_frac * rng.standard_normal()
            if self.noise.s21_additive_sigma > 0:
                s += self.noise.s21_additive_sigma * rng.standard_normal()
        return min(1.0, max(0.0, s))


_DARK = Illumination(None, None, 0.0, 0.0, 0.0, missed=False)
