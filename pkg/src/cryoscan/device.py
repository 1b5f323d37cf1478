"""Device under test: mask geometry, MKID transmission response, stray-light
background coupling and thermal relaxation.

S21 magnitudes are dimensionless in [0, 1]; powers in watts; the device
plane coordinates and hole geometry are in mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

from .optics import BeamSpot, DevicePlane, aperture_power
from .steering import VoltageCoord

__all__ = [
    "Hole",
    "MaskPattern",
    "MkidParams",
    "DeviceState",
    "BackgroundModel",
    "MaskFileError",
    "masked_power",
    "s21_magnitude",
    "delta_s21",
    "thermal_relax",
    "background_power",
    "load_mask",
    "save_mask",
]


class MaskFileError(ValueError):
    """Malformed mask geometry file."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class Hole:
    center: tuple          # (u, v) mm on the device plane
    radius: float          # mm

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.radius <= 0:
            raise ValueError("hole radius must be > 0")


@dataclass(frozen=True)
class MaskPattern:
    """Screen-plate hole pattern, or the open configuration (no plate)."""

    kind: str                   # "open" | "screen"
    holes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("open", "screen"):
            raise ValueError(f"mask kind must be 'open' or 'screen', got {self.kind!r}")
        holes = tuple(self.holes)
        object.__setattr__(self, "holes", holes)
        if self.kind == "screen" and not holes:
            raise ValueError("screen masks need at least one hole")
        if self.kind == "open" and holes:
            raise ValueError("open masks carry no holes")
        for i, a in enumerate(holes):
            for b in holes[i + 1:]:
                d = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
                if d < a.radius + b.radius:
                    raise ValueError(
                        f"holes at {a.center} and {b.center} overlap; "
                        "masked power would double count"
                    )

    def validate_against(self, plane: DevicePlane) -> None:
        """Every hole must lie fully inside the device plane's active region."""
        for h in self.holes:
            u, v = h.center
            if (abs(u) + h.radius > plane.active_halfwidth
                    or abs(v) + h.radius > plane.active_halfheight):
                raise ValueError(
                    f"hole at ({u}, {v}) mm radius {h.radius} mm extends outside "
                    f"the active region (+-{plane.active_halfwidth} x "
                    f"+-{plane.active_halfheight} mm)"
                )


def masked_power(spot: BeamSpot, mask: MaskPattern) -> tuple:
    """Split the spot power into (through, blocked) watts for a mask.

    Screen plates pass the sum over their (non-overlapping) holes; the open
    configuration passes everything. through + blocked == total_power up to
    the aperture integration tolerance.
    """
    if mask.kind == "open":
        return spot.total_power, 0.0
    through = 0.0
    for h in mask.holes:
        through += aperture_power(spot, h.center, h.radius)
    through = min(through, spot.total_power)
    return through, spot.total_power - through


@dataclass(frozen=True)
class MkidParams:
    """Single-notch resonator parameters and linear power responsivities.

    Absorbed optical power shifts the resonance down in frequency
    (freq_responsivity < 0, Hz/W) and adds internal loss
    (q_responsivity, 1/W on 1/Qi). Defaults give a loaded Q of 1.2e5.
    """

    f0: float = 5.0e9                  # Hz
    Qi: float = 3.0e5
    Qc: float = 2.0e5
    readout_freq: float = 5.0e9        # Hz, fixed readout tone
    freq_responsivity: float = -3.0e11   # Hz per watt
    q_responsivity: float = 4.0          # (1/Qi) increase per watt
    relax_tau: float = 4.0               # s

    def __post_init__(self):
        if self.Qi <= 0 or self.Qc <= 0:
            raise ValueError("quality factors must be > 0")
        if self.f0 <= 0:
            raise ValueError("f0 must be > 0")
        if self.freq_responsivity >= 0:
            raise ValueError("freq_responsivity must be < 0 (resonance shifts down)")
        if self.q_responsivity < 0:
            raise ValueError("q_responsivity must be >= 0")
        if self.relax_tau <= 0:
            raise ValueError("relax_tau must be > 0")

    @property
    def loaded_q(self) -> float:
        return 1.0 / (1.0 / self.Qi + 1.0 / self.Qc)

    @property
    def linewidth(self) -> float:
        return self.f0 / self.loaded_q


# measurements are only meaningful near the resonance feature
_VALIDITY_LINEWIDTHS = 10.0


def s21_magnitude(f: float, p: MkidParams, absorbed: float) -> float:
    """Transmission magnitude at frequency f under an absorbed power load.

    Notch model |1 - (Q_L/Qc) / (1 + 2j Q_L (f - f0') / f0')| with the
    resonance shifted by freq_responsivity*absorbed and the internal loss
    raised by q_responsivity*absorbed. f must sit within 10 linewidths of
    the baseline resonance.
    """
    if absorbed < 0:
        raise ValueError("absorbed power must be >= 0")
    if abs(f - p.f0) > _VALIDITY_LINEWIDTHS * p.linewidth * (1.0 + 1e-12):
        raise ValueError(
            f"readout frequency {f} Hz outside the model validity window "
            f"(+-{_VALIDITY_LINEWIDTHS:.0f} linewidths of f0)"
        )
    f0p = p.f0 + p.freq_responsivity * absorbed
    qi_loss = 1.0 / p.Qi + p.q_responsivity * absorbed
    ql = 1.0 / (qi_loss + 1.0 / p.Qc)
    x = 2.0 * ql * (f - f0p) / f0p
    a = ql / p.Qc
    # |1 - a/(1+jx)|
    return math.sqrt(1.0 - a * (2.0 - a) / (1.0 + x * x))


def delta_s21(p: MkidParams, absorbed: float) -> float:
    """Change in transmission magnitude at the readout tone vs the dark state.

    Non-negative whenever the readout tone sits at the baseline resonance.
    """
    return s21_magnitude(p.readout_freq, p, absorbed) - s21_magnitude(p.readout_freq, p, 0.0)


@dataclass(frozen=True)
class DeviceState:
    """Thermal state of the chip: effective absorbed power and time."""

    absorbed_power: float = 0.0
    time: float = 0.0
    baseline_s21: float = 0.0

    def __post_init__(self):
        if self.absorbed_power < 0:
            raise ValueError("absorbed_power must be >= 0")


def thermal_relax(state: DeviceState, dt: float, p: MkidParams) -> DeviceState:
    """Exponential decay of the absorbed power over dt (source off)."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    return replace(
        state,
        absorbed_power=state.absorbed_power * math.exp(-dt / p.relax_tau),
        time=state.time + dt,
    )


@dataclass(frozen=True)
class BackgroundModel:
    """Stray-reflection coupling of blocked beam power back onto the chip.

    The coupling map is a quadratic polynomial over voltage space, clipped
    to [0, 1]; the open-plate response landscape is configuration, not
    something the underlying reflections explain.
    """

    scale: float = 0.0                     # watts absorbed per watt blocked
    c00: float = 0.0
    c10: float = 0.0
    c01: float = 0.0
    c20: float = 0.0
    c02: float = 0.0
    c11: float = 0.0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("background scale must be >= 0")

    def coupling(self, v: VoltageCoord) -> float:
        raw = (
            self.c00
            + self.c10 * v.vx
            + self.c01 * v.vy
            + self.c20 * v.vx * v.vx
            + self.c02 * v.vy * v.vy
            + self.c11 * v.vx * v.vy
        )
        return min(1.0, max(0.0, raw))


def background_power(blocked: float, v: VoltageCoord, bg: BackgroundModel) -> float:
    """Stray power reaching the chip from the blocked part of the beam."""
    if blocked < 0:
        raise ValueError("blocked power must be >= 0")
    return bg.scale * bg.coupling(v) * blocked


# -- mask geometry files -----------------------------------------------------

def load_mask(path) -> MaskPattern:
    """Read a mask pattern from a plain-text geometry file.

    First non-comment line is the kind ('open' or 'screen'); screen masks
    follow with one hole per line: u_mm v_mm radius_mm.
    """
    path = Path(path)
    kind = None
    holes = []
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if kind is None:
            if line not in ("open", "screen"):
                raise MaskFileError(path, line_no, f"expected 'open' or 'screen', got {line!r}")
            kind = line
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MaskFileError(path, line_no, "expected: u_mm v_mm radius_mm")
        try:
            u, v, r = (float(x) for x in parts)
        except ValueError:
            raise MaskFileError(path, line_no, f"non-numeric hole row {line!r}") from None
        try:
            holes.append(Hole((u, v), r))
        except ValueError as exc:
            raise MaskFileError(path, line_no, str(exc)) from None
    if kind is None:
        raise MaskFileError(path, 1, "empty mask file")
    try:
        return MaskPattern(kind=kind, holes=tuple(holes))
    except ValueError as exc:
        raise MaskFileError(path, 1, str(exc)) from None


def save_mask(mask: MaskPattern, path) -> None:
    lines = ["# cryoscan mask geometry (mm)", mask.kind]
    for h in mask.holes:
        lines.append(f"{h.center[0]!r} {h.center[1]!r} {h.radius!r}")
    Path(path).write_text("\n".join(lines) + "\n")
