"""Beam path geometry: focuser -> MEMS mirror -> stationary mirror -> device.

The trace works on plain float 3-tuples (fast enough for 100k+ rays without
vectorization). Lengths are in mm; spot sigmas in microns; wavelengths in nm.

The default layout is a retro-incidence design: the focuser fires straight
down onto the MEMS face (normal incidence at rest) and a 45-degree
stationary fold mirror behind the focuser redirects the steered beam onto
the device plane, which sits perpendicular to the folded rest ray. Normal
incidence makes the beam deflection exactly twice the mechanical tilt on
both axes and makes the traced position map exactly odd under command
negation; a tilted first bounce would break both (the in-plane tilt axis
picks up second-order even terms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import integrate, special

from .steering import MirrorPose

__all__ = [
    "Ray",
    "Plane",
    "DevicePlane",
    "OpticalLayout",
    "BeamSpot",
    "SpotModelConfig",
    "TraceMissError",
    "default_layout",
    "reflect",
    "pose_to_normal",
    "trace_to_device",
    "scan_extent",
    "spot_profile",
    "aperture_power",
]

_GRAZING_EPS = 1e-12

# system wavelength band, nm
BAND_MIN_NM = 180.0
BAND_MAX_NM = 2000.0


# -- small 3-vector helpers on tuples ---------------------------------------

def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _norm(a):
    return math.sqrt(_dot(a, a))


def _unit(a):
    n = _norm(a)
    if n == 0:
        raise ValueError("zero-length vector")
    return _scale(a, 1.0 / n)


def _rotate(vec, axis, angle):
    # Rodrigues rotation; axis must be unit length
    c, s = math.cos(angle), math.sin(angle)
    k_cross_v = _cross(axis, vec)
    k_dot_v = _dot(axis, vec)
    return (
        vec[0] * c + k_cross_v[0] * s + axis[0] * k_dot_v * (1 - c),
        vec[1] * c + k_cross_v[1] * s + axis[1] * k_dot_v * (1 - c),
        vec[2] * c + k_cross_v[2] * s + axis[2] * k_dot_v * (1 - c),
    )


class TraceMissError(RuntimeError):
    """The traced beam missed a surface; carries the last valid segment."""

    def __init__(self, surface: str, last_ray: "Ray"):
        super().__init__(f"beam missed the {surface}")
        self.surface = surface
        self.last_ray = last_ray


def _require_unit(name, v, tol=1e-9):
    if abs(_norm(v) - 1.0) > tol:
        raise ValueError(f"{name} must be unit length (|v|={_norm(v)!r})")
    return tuple(float(c) for c in v)


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "direction", _require_unit("ray direction", self.direction))

    def at(self, t: float) -> tuple:
        return _add(self.origin, _scale(self.direction, t))


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    aperture_radius: float | None = None   # None -> unbounded

    def __post_init__(self):
        object.__setattr__(self, "point", tuple(float(c) for c in self.point))
        object.__setattr__(self, "normal", _require_unit("plane normal", self.normal))


@dataclass(frozen=True)
class DevicePlane:
    """Device plane with an orthonormal in-plane basis defining (u, v) mm.

    ``active_halfwidth/height`` bound the region that counts as the device
    (mask holes must fit inside; beam power landing outside feeds the
    stray-reflection background).
    """

    point: tuple
    normal: tuple
    e_u: tuple
    e_v: tuple
    active_halfwidth: float = 20.0
    active_halfheight: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "point", tuple(float(c) for c in self.point))
        object.__setattr__(self, "normal", _require_unit("device normal", self.normal))
        object.__setattr__(self, "e_u", _require_unit("device e_u", self.e_u))
        object.__setattr__(self, "e_v", _require_unit("device e_v", self.e_v))
        if abs(_dot(self.e_u, self.e_v)) > 1e-9:
            raise ValueError("device in-plane basis must be orthogonal")
        for e in (self.e_u, self.e_v):
            if abs(_dot(e, self.normal)) > 1e-9:
                raise ValueError("device basis must lie in the plane")

    def contains(self, u: float, v: float) -> bool:
        return abs(u) <= self.active_halfwidth and abs(v) <= self.active_halfheight


@dataclass(frozen=True)
class OpticalLayout:
    """Positions and orientations of the beam-path elements, mm."""

    focuser_origin: tuple
    focuser_direction: tuple
    mems_pivot: tuple
    mems_rest_normal: tuple
    mems_axis_x: tuple                  # mirror tilt-x axis, in the rest mirror plane
    stationary_mirror: Plane
    device_plane: DevicePlane
    focal_length: float = 150.0

    def __post_init__(self):
        object.__setattr__(self, "focuser_origin", tuple(float(c) for c in self.focuser_origin))
        object.__setattr__(self, "focuser_direction", _require_unit("focuser direction", self.focuser_direction))
        object.__setattr__(self, "mems_pivot", tuple(float(c) for c in self.mems_pivot))
        object.__setattr__(self, "mems_rest_normal", _require_unit("mems rest normal", self.mems_rest_normal))
        object.__setattr__(self, "mems_axis_x", _require_unit("mems axis x", self.mems_axis_x))
        if abs(_dot(self.mems_axis_x, self.mems_rest_normal)) > 1e-9:
            raise ValueError("mems_axis_x must lie in the mirror plane")
        if self.focal_length <= 0:
            raise ValueError("focal_length must be > 0")

    def rest_path_length(self) -> float:
        """Focuser -> MEMS -> stationary -> device path length at rest pose."""
        p0 = self.focuser_origin
        p1 = trace_to_device(MirrorPose(0.0, 0.0), self, _return_points=True)
        return (
            _norm(_sub(p1[0], p0))
            + _norm(_sub(p1[1], p1[0]))
            + _norm(_sub(p1[2], p1[1]))
        )


def default_layout(
    active_halfwidth: float = 20.0,
    active_halfheight: float = 20.0,
    focal_length: float = 150.0,
) -> OpticalLayout:
    """Retro-incidence two-bounce layout with a 150 mm rest path.

    Focuser fires -z onto the MEMS at the origin (10 mm standoff); the
    stationary fold mirror sits 15 mm above the MEMS (behind the focuser)
    and folds the return beam onto +x; the device plane is 125 mm further,
    perpendicular to the folded rest ray. Scaling every distance by
    focal_length/150 keeps the fold angles and supports the alternate
    140 mm / 200 mm focal configurations.
    """
    s = focal_length / 150.0
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    return OpticalLayout(
        focuser_origin=(0.0, 0.0, 10.0 * s),
        focuser_direction=(0.0, 0.0, -1.0),
        mems_pivot=(0.0, 0.0, 0.0),
        mems_rest_normal=(0.0, 0.0, 1.0),
        mems_axis_x=(0.0, 1.0, 0.0),
        stationary_mirror=Plane(
            point=(0.0, 0.0, 15.0 * s),
            normal=(-inv_sqrt2, 0.0, inv_sqrt2),
            aperture_radius=12.7,
        ),
        device_plane=DevicePlane(
            point=(125.0 * s, 0.0, 15.0 * s),
            normal=(-1.0, 0.0, 0.0),
            e_u=(0.0, 0.0, 1.0),
            e_v=(0.0, 1.0, 0.0),
            active_halfwidth=active_halfwidth,
            active_halfheight=active_halfheight,
        ),
        focal_length=focal_length,
    )


def reflect(ray: Ray, surface_point, normal) -> Ray:
    """Specular reflection of a ray off the plane (surface_point, normal).

    Raises TraceMissError for rays parallel to the plane (no intersection)
    or intersecting behind the ray origin.
    """
    normal = _require_unit("surface normal", normal)
    surface_point = tuple(float(c) for c in surface_point)
    denom = _dot(ray.direction, normal)
    if abs(denom) <= _GRAZING_EPS:
        raise TraceMissError("surface (grazing/parallel ray)", ray)
    t = _dot(_sub(surface_point, ray.origin), normal) / denom
    if t <= 0.0:
        raise TraceMissError("surface (intersection behind ray)", ray)
    hit = ray.at(t)
    d = ray.direction
    refl = _sub(d, _scale(normal, 2.0 * denom))
    return Ray(origin=hit, direction=refl)


def pose_to_normal(pose: MirrorPose, layout: OpticalLayout) -> tuple:
    """Mirror surface normal for a pose, unit length.

    The rest normal is rotated by tilt_x about the mirror's x axis, then by
    tilt_y about the rotated mirror y axis (intrinsic composition).
    """
    if abs(pose.tilt_x) > math.pi / 4 or abs(pose.tilt_y) > math.pi / 4:
        raise ValueError("|tilt| must be <= pi/4 per axis")
    ax = layout.mems_axis_x
    n0 = layout.mems_rest_normal
    ay0 = _cross(n0, ax)
    n1 = _rotate(n0, ax, pose.tilt_x)
    ay = _rotate(ay0, ax, pose.tilt_x)
    return _unit(_rotate(n1, ay, pose.tilt_y))


def trace_to_device(pose: MirrorPose, layout: OpticalLayout, _return_points: bool = False):
    """Trace the beam for a pose; returns the (u, v) device-plane hit in mm.

    Two bounces: MEMS plane through the pivot with the posed normal, then the
    stationary mirror (bounded by its aperture), then intersection with the
    device plane. Missing the stationary aperture or the device plane raises
    TraceMissError carrying the last valid segment.
    """
    src = Ray(layout.focuser_origin, layout.focuser_direction)
    n = pose_to_normal(pose, layout)
    after_mems = reflect(src, layout.mems_pivot, n)

    sm = layout.stationary_mirror
    after_fold = reflect(after_mems, sm.point, sm.normal)
    if sm.aperture_radius is not None:
        if _norm(_sub(after_fold.origin, sm.point)) > sm.aperture_radius:
            raise TraceMissError("stationary mirror aperture", after_mems)

    dp = layout.device_plane
    denom = _dot(after_fold.direction, dp.normal)
    if abs(denom) <= _GRAZING_EPS:
        raise TraceMissError("device plane", after_fold)
    t = _dot(_sub(dp.point, after_fold.origin), dp.normal) / denom
    if t <= 0.0:
        raise TraceMissError("device plane", after_fold)
    hit = after_fold.at(t)
    if _return_points:
        return (after_mems.origin, after_fold.origin, hit)
    rel = _sub(hit, dp.point)
    return (_dot(rel, dp.e_u), _dot(rel, dp.e_v))


def scan_extent(layout: OpticalLayout, chain, n: int = 21):
    """Bounding box of the traced positions over an n x n command grid.

    ``chain`` maps normalized commands (vx, vy) in [-1,1]^2 to a MirrorPose
    (the steering chain). Returns ((u_min, u_max), (v_min, v_max), misses)
    where misses lists the (vx, vy) grid points whose trace missed a surface;
    the box covers the hits only.
    """
    if n < 2:
        raise ValueError("grid resolution n must be >= 2")
    u_min = v_min = math.inf
    u_max = v_max = -math.inf
    misses = []
    for j in range(n):
        vy = -1.0 + 2.0 * j / (n - 1)
        for i in range(n):
            vx = -1.0 + 2.0 * i / (n - 1)
            try:
                u, v = trace_to_device(chain(vx, vy), layout)
            except TraceMissError:
                misses.append((vx, vy))
                continue
            u_min = min(u_min, u)
            u_max = max(u_max, u)
            v_min = min(v_min, v)
            v_max = max(v_max, v)
    if not math.isfinite(u_min):
        raise TraceMissError("device plane (every grid point missed)", Ray(layout.focuser_origin, layout.focuser_direction))
    return (u_min, u_max), (v_min, v_max), misses


@dataclass(frozen=True)
class SpotModelConfig:
    """Chromatic spot-size model: mean diameter grows linearly away from the
    focuser design wavelength. Diameters and sigmas in microns."""

    design_wavelength: float = 650.0       # nm
    min_diameter: float = 80.0             # um, at the design wavelength
    chromatic_slope: float = 0.6           # um per nm of |lambda - design|
    ellipticity: float = 1.0               # sigma_major / sigma_minor
    orientation: float = 0.0               # radians in the device plane

    def __post_init__(self):
        if self.min_diameter <= 0:
            raise ValueError("min_diameter must be > 0")
        if self.chromatic_slope < 0:
            raise ValueError("chromatic_slope must be >= 0")
        if self.ellipticity < 1.0:
            raise ValueError("ellipticity must be >= 1")


@dataclass(frozen=True)
class BeamSpot:
    """Elliptical Gaussian beam spot on the device plane.

    center in mm; sigmas in microns; reported diameters follow the +-2 sigma
    convention (diameter = 4 sigma).
    """

    center: tuple
    sigma_major: float
    sigma_minor: float
    orientation: float
    total_power: float
    wavelength: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not (self.sigma_major >= self.sigma_minor > 0):
            raise ValueError("require sigma_major >= sigma_minor > 0")
        if self.total_power < 0:
            raise ValueError("total_power must be >= 0")

    @property
    def diameter_major(self) -> float:
        return 4.0 * self.sigma_major

    @property
    def diameter_minor(self) -> float:
        return 4.0 * self.sigma_minor

    @property
    def mean_diameter(self) -> float:
        return 2.0 * (self.sigma_major + self.sigma_minor)


def spot_profile(center, wavelength: float, cfg: SpotModelConfig, power: float) -> BeamSpot:
    """Beam spot at a device-plane position for a source wavelength.

    Mean diameter = min_diameter + chromatic_slope * |lambda - design|; the
    mean sigma is diameter/4 and is the arithmetic mean of the two axis
    sigmas, split according to cfg.ellipticity.
    """
    if not (BAND_MIN_NM <= wavelength <= BAND_MAX_NM):
        raise ValueError(
            f"wavelength {wavelength} nm outside system band "
            f"[{BAND_MIN_NM:.0f}, {BAND_MAX_NM:.0f}] nm"
        )
    diameter = cfg.min_diameter + cfg.chromatic_slope * abs(wavelength - cfg.design_wavelength)
    sigma_mean = diameter / 4.0
    e = cfg.ellipticity
    sigma_minor = 2.0 * sigma_mean / (1.0 + e)
    sigma_major = e * sigma_minor
    return BeamSpot(
        center=(center[0], center[1]),
        sigma_major=sigma_major,
        sigma_minor=sigma_minor,
        orientation=cfg.orientation,
        total_power=power,
        wavelength=wavelength,
    )


def aperture_power(spot: BeamSpot, hole_center, hole_radius: float) -> float:
    """Power of the spot passing through a circular hole (center mm, radius mm).

    Circular spots use the closed noncentral-chi-square form; elliptical
    spots fall back to adaptive 2D quadrature at 1e-6 relative tolerance.
    Result is clamped to [0, total_power].
    """
    if hole_radius <= 0:
        raise ValueError("hole_radius must be > 0")
    if spot.total_power == 0.0:
        return 0.0
    s_maj_mm = spot.sigma_major * 1e-3
    s_min_mm = spot.sigma_minor * 1e-3
    dx = hole_center[0] - spot.center[0]
    dy = hole_center[1] - spot.center[1]

    if s_maj_mm == s_min_mm:
        # offset circular Gaussian over a disc: noncentral chi-square with 2 dof
        s = s_maj_mm
        frac = special.chndtr((hole_radius / s) ** 2, 2.0, (dx * dx + dy * dy) / s**2)
        return float(min(max(frac, 0.0), 1.0) * spot.total_power)

    # rotate the offset into the spot principal frame
    c, sn = math.cos(spot.orientation), math.sin(spot.orientation)
    ox = c * dx + sn * dy
    oy = -sn * dx + c * dy
    inv2a = 1.0 / (2.0 * s_maj_mm**2)
    inv2b = 1.0 / (2.0 * s_min_mm**2)
    norm = 1.0 / (2.0 * math.pi * s_maj_mm * s_min_mm)

    def integrand(y, x):
        u = x - ox
        w = y - oy
        return norm * math.exp(-(u * u * inv2a + w * w * inv2b))

    frac, _ = integrate.dblquad(
        integrand,
        -hole_radius,
        hole_radius,
        lambda x: -math.sqrt(max(hole_radius**2 - x * x, 0.0)),
        lambda x: math.sqrt(max(hole_radius**2 - x * x, 0.0)),
        epsabs=1e-12,
        epsrel=1e-6,
    )
    return float(min(max(frac, 0.0), 1.0) * spot.total_power)
