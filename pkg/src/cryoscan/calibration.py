"""Calibration analysis: beam-spot fitting on camera images, hole detection
in response maps, fitting the voltage -> position mapping (affine plus the
per-axis tanh saturation family) and inverting it to steer to physical
targets.

Images are 16-bit grayscale with a known pixel pitch in microns; maps come
from the scan engine; physical positions are in mm on the device plane.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

from .optics import BeamSpot
from .scanning import ResponseMap
from .steering import VoltageCoord, saturation, saturation_inverse

__all__ = [
    "IntensityImage",
    "Blob",
    "BlobSet",
    "MappingModel",
    "SpotFitError",
    "CalibrationError",
    "DegenerateGeometryError",
    "fit_spot",
    "render_spot_image",
    "read_pgm",
    "write_pgm",
    "detect_holes",
    "fit_mapping",
    "invert_mapping",
    "OutOfRangeError",
    "distortion_metrics",
]

# damped least-squares settings shared by every fit in this module
_FIT_MAX_ITER = 200
_FIT_TOL = 1e-10


class SpotFitError(RuntimeError):
    """Spot fitting failed (no dominant peak, clipping, or non-convergence)."""


class CalibrationError(RuntimeError):
    """Mapping fit failed or exceeded the residual gate; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateGeometryError(CalibrationError):
    """Correspondences are insufficient or geometrically degenerate."""


class OutOfRangeError(ValueError):
    """Target outside the reachable extent; carries the nearest reachable point."""

    def __init__(self, target, nearest_v, nearest_mm):
        super().__init__(
            f"target ({target[0]:.3f}, {target[1]:.3f}) mm is outside the "
            f"calibrated range; nearest reachable point is "
            f"({nearest_mm[0]:.3f}, {nearest_mm[1]:.3f}) mm"
        )
        self.target = tuple(target)
        self.nearest_v = nearest_v
        self.nearest_mm = tuple(nearest_mm)


@dataclass(frozen=True)
class IntensityImage:
    """Row-major non-negative intensities with a pixel pitch in microns."""

    values: np.ndarray
    pixel_pitch: float          # um per pixel
    max_value: float | None = None   # sensor full scale, for clipping checks

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 8 or arr.shape[1] < 8:
            raise ValueError("image must be 2D and at least 8x8 pixels")
        if (arr < 0).any():
            raise ValueError("intensities must be >= 0")
        if self.pixel_pitch <= 0:
            raise ValueError("pixel_pitch must be > 0")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


# -- PGM I/O (binary P5, 8/16-bit) -------------------------------------------

def read_pgm(path, pixel_pitch: float) -> IntensityImage:
    """Read a binary P5 PGM; 16-bit samples are big-endian per the format."""
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary (P5) PGM file")
    width, height, maxval = (int(m.group(i)) for i in (1, 2, 3))
    raw = data[m.end():]
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height
    pixels = np.frombuffer(raw, dtype=dtype, count=count)
    if pixels.size != count:
        raise ValueError(f"{path}: truncated pixel data")
    values = pixels.astype(float).reshape(height, width)
    return IntensityImage(values=values, pixel_pitch=pixel_pitch, max_value=float(maxval))


def write_pgm(img: IntensityImage, path, maxval: int = 65535) -> None:
    arr = np.clip(np.round(img.values), 0, maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode()
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


def render_spot_image(
    spot: BeamSpot,
    *,
    pixel_pitch: float = 5.0,
    width: int = 128,
    height: int = 128,
    amplitude: float = 40000.0,
    offset: float = 800.0,
    noise_sigma: float = 0.0,
    rng=None,
) -> IntensityImage:
    """Render a camera image of a beam spot (spot center at the image center).

    Intended for simulated camera frames: amplitude/offset are in counts and
    optional Gaussian read noise can be added from a seeded generator.
    """
    y, x = np.mgrid[0:height, 0:width]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    dx = (x - cx) * pixel_pitch
    dy = (y - cy) * pixel_pitch
    c, s = math.cos(spot.orientation), math.sin(spot.orientation)
    u = c * dx + s * dy
    w = -s * dx + c * dy
    values = offset + amplitude * np.exp(
        -(u**2 / (2 * spot.sigma_major**2) + w**2 / (2 * spot.sigma_minor**2))
    )
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        values = values + noise_sigma * rng.standard_normal(values.shape)
    return IntensityImage(values=np.clip(values, 0.0, None), pixel_pitch=pixel_pitch)


# -- spot fitting --------------------------------------------------------------

def _gauss1d(x, amp, center, sigma, offset):
    return offset + amp * np.exp(-((x - center) ** 2) / (2 * sigma**2))


def _fit_gauss1d(x, y):
    offset0 = float(np.median(y))
    amp0 = float(y.max() - offset0)
    center0 = float(x[np.argmax(y)])
    above = y - offset0 > amp0 / 2
    width = (x[above].max() - x[above].min()) if above.any() else (x[1] - x[0])
    sigma0 = max(width / 2.355, (x[1] - x[0]) / 2)
    try:
        with warnings.catch_warnings():
            # exact synthetic profiles legitimately hit zero residual
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, _ = optimize.curve_fit(
                _gauss1d, x, y, p0=(amp0, center0, sigma0, offset0),
                method="lm", maxfev=_FIT_MAX_ITER * 5, ftol=_FIT_TOL, xtol=_FIT_TOL,
            )
    except RuntimeError as exc:
        raise SpotFitError(f"1D Gaussian fit did not converge: {exc}") from None
    amp, center, sigma, offset = popt
    if amp <= 0 or not np.isfinite(sigma):
        raise SpotFitError("1D Gaussian fit returned a non-physical profile")
    return amp, center, abs(sigma), offset


def _axis_marginal(signal, centroid_rc, axis_xy, band_halfwidth_px, pitch):
    """1D distribution of intensity along an axis through the centroid.

    Pixels within the perpendicular band are binned by their coordinate
    along the axis (one bin per pixel pitch) and summed; integrating across
    the band is what keeps the profile usable at modest SNR. Only fully
    covered bins are returned so image corners do not distort the tails.
    """
    rows, cols = np.mgrid[0:signal.shape[0], 0:signal.shape[1]]
    dx = cols - centroid_rc[1]
    dy = rows - centroid_rc[0]
    t = dx * axis_xy[0] + dy * axis_xy[1]
    s = -dx * axis_xy[1] + dy * axis_xy[0]
    in_band = np.abs(s) <= band_halfwidth_px
    bins = np.round(t[in_band]).astype(int)
    weights = signal[in_band]
    lo, hi = bins.min(), bins.max()
    sums = np.bincount(bins - lo, weights=weights, minlength=hi - lo + 1)
    counts = np.bincount(bins - lo, minlength=hi - lo + 1)
    # per-bin mean: occupancy varies with rasterization of the rotated band,
    # and image corners only partially cover the extreme bins
    ok = counts >= max(counts.max() * 0.5, 1)
    ts = (np.arange(lo, hi + 1)[ok]) * pitch
    return ts, sums[ok] / counts[ok]


def fit_spot(img: IntensityImage) -> BeamSpot:
    """Fit an elliptical Gaussian to a single-spot camera image.

    Principal axes come from the background-subtracted intensity second
    moments; a 1D Gaussian (amplitude, center, sigma, offset) is then fit
    to the profile along each axis through the centroid. Diameters follow
    the +-2 sigma convention. The result is invariant under scaling all
    pixel values by a positive constant.
    """
    values = img.values
    background = float(np.median(values))
    peak = float(values.max())
    if peak <= 0 or (background > 0 and peak < 5 * background):
        raise SpotFitError(
            f"no dominant spot: peak {peak:.1f} is not 5x the median {background:.1f}"
        )
    if img.max_value is not None and (values >= img.max_value).sum() > 4:
        raise SpotFitError("saturated spot core (clipped pixels); reduce exposure")

    # principal axes from the second moments of the smoothed, core-thresholded
    # signal: isolated noise pixels far from the spot carry huge lever arms,
    # so they must not survive into the moment sums. The light isotropic blur
    # only adds the same variance to both axes and leaves the axes and the
    # centroid unbiased; the sigma values come from the raw-profile fits below.
    raw = values - background
    signal = np.clip(raw, 0.0, None)
    smoothed = ndimage.gaussian_filter(signal, sigma=1.0)
    core = np.where(smoothed >= 0.2 * smoothed.max(), smoothed, 0.0)
    total = core.sum()
    rows, cols = np.mgrid[0:img.height, 0:img.width]
    r_c = float((rows * core).sum() / total)
    c_c = float((cols * core).sum() / total)
    mrr = float((((rows - r_c) ** 2) * core).sum() / total)
    mcc = float((((cols - c_c) ** 2) * core).sum() / total)
    mrc = float((((rows - r_c) * (cols - c_c)) * core).sum() / total)
    cov = np.array([[mcc, mrc], [mrc, mrr]])   # (x, y) = (col, row) order
    evals, evecs = np.linalg.eigh(cov)
    # eigh sorts ascending: column 1 is the major axis
    major_dir_xy = evecs[:, 1]
    minor_dir_xy = evecs[:, 0]

    # band half-widths: integrate across ~3 sigma of the perpendicular axis
    widths_px = 3.0 * np.sqrt(np.maximum(evals, 1.0))
    sigmas = []
    for d_xy, band in ((major_dir_xy, widths_px[0]), (minor_dir_xy, widths_px[1])):
        ts_um, prof = _axis_marginal(raw, (r_c, c_c), d_xy,
                                     max(band, 3.0), img.pixel_pitch)
        _, center_um, sigma_um, _ = _fit_gauss1d(ts_um, prof)
        sigmas.append(sigma_um)
    sigma_major, sigma_minor = sigmas
    orientation = math.atan2(major_dir_xy[1], major_dir_xy[0])
    if sigma_minor > sigma_major:
        sigma_major, sigma_minor = sigma_minor, sigma_major
        orientation += math.pi / 2
    # report orientation in (-pi/2, pi/2]; the axis is direction-free
    orientation = math.atan2(math.sin(orientation), math.cos(orientation))
    if orientation <= -math.pi / 2:
        orientation += math.pi
    elif orientation > math.pi / 2:
        orientation -= math.pi

    center_mm = (
        (c_c - (img.width - 1) / 2.0) * img.pixel_pitch * 1e-3,
        (r_c - (img.height - 1) / 2.0) * img.pixel_pitch * 1e-3,
    )
    return BeamSpot(
        center=center_mm,
        sigma_major=sigma_major,
        sigma_minor=sigma_minor,
        orientation=orientation,
        total_power=float(total),    # uncalibrated counts for camera fits
        wavelength=float("nan"),
    )


# -- hole detection --------------------------------------------------------------

@dataclass(frozen=True)
class Blob:
    centroid: VoltageCoord
    weight: float
    # second moments about the centroid in voltage units: (m_xx, m_yy, m_xy)
    moments: tuple
    pixel_count: int


@dataclass(frozen=True)
class BlobSet:
    blobs: tuple

    def __len__(self):
        return len(self.blobs)

    def __iter__(self):
        return iter(self.blobs)

    def centroids(self) -> np.ndarray:
        return np.array([[b.centroid.vx, b.centroid.vy] for b in self.blobs])


def detect_holes(m: ResponseMap, threshold_frac: float) -> BlobSet:
    """Find connected high-response regions of a grid map.

    The map minimum is removed first, then pixels above
    threshold_frac * max are grouped 4-connected; each component yields a
    response-weighted centroid and second moments in voltage coordinates.
    An all-quiet map returns an empty BlobSet.
    """
    if m.plan.kind != "grid":
        raise ValueError("hole detection applies to grid maps")
    if not (0.0 < threshold_frac < 1.0):
        raise ValueError("threshold_frac must lie in (0, 1)")
    deltas = m.deltas_grid()
    valid = ~np.isnan(deltas)
    if not valid.any():
        return BlobSet(blobs=())
    floor = np.nanmin(deltas)
    shifted = np.where(valid, deltas - floor, 0.0)
    peak = shifted.max()
    if peak <= 0.0:
        return BlobSet(blobs=())
    mask = shifted >= threshold_frac * peak
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])   # 4-connectivity
    labels, n = ndimage.label(mask, structure=structure)

    vxs = np.linspace(m.plan.vx_lo, m.plan.vx_hi, m.plan.nx)
    vys = np.linspace(m.plan.vy_lo, m.plan.vy_hi, m.plan.ny)
    gx, gy = np.meshgrid(vxs, vys)

    blobs = []
    for lab in range(1, n + 1):
        sel = labels == lab
        w = shifted[sel]
        wsum = float(w.sum())
        cx = float((gx[sel] * w).sum() / wsum)
        cy = float((gy[sel] * w).sum() / wsum)
        mxx = float(((gx[sel] - cx) ** 2 * w).sum() / wsum)
        myy = float(((gy[sel] - cy) ** 2 * w).sum() / wsum)
        mxy = float(((gx[sel] - cx) * (gy[sel] - cy) * w).sum() / wsum)
        blobs.append(Blob(
            centroid=VoltageCoord(cx, cy),
            weight=wsum,
            moments=(mxx, myy, mxy),
            pixel_count=int(sel.sum()),
        ))
    blobs.sort(key=lambda b: -b.weight)
    return BlobSet(blobs=tuple(blobs))


def _moment_ellipse(moments):
    mxx, myy, mxy = moments
    cov = np.array([[mxx, mxy], [mxy, myy]])
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0:
        raise ValueError("undefined moments (single-pixel or degenerate blob)")
    ecc = math.sqrt(max(0.0, 1.0 - evals[0] / evals[1]))
    axis = math.atan2(evecs[1, 1], evecs[0, 1])
    if axis <= -math.pi / 2:
        axis += math.pi
    elif axis > math.pi / 2:
        axis -= math.pi
    return ecc, axis


def distortion_metrics(blob: Blob, true_hole=None) -> dict:
    """Eccentricity and elongation axis of a detected blob.

    ``true_hole`` is the circular ground truth (center mm, radius mm) the
    blob images; being circular, any eccentricity measures the mapping
    distortion. Single-pixel blobs have undefined moments and are an error.
    """
    try:
        ecc, axis = _moment_ellipse(blob.moments)
    except ValueError as exc:
        raise CalibrationError(str(exc)) from None
    out = {"eccentricity": ecc, "elongation_axis": axis}
    if true_hole is not None:
        out["true_center_mm"] = tuple(true_hole[0])
        out["true_radius_mm"] = float(true_hole[1])
    return out


# -- mapping model --------------------------------------------------------------

@dataclass(frozen=True)
class MappingModel:
    """Invertible voltage -> device-position map with saturation distortion.

    predict(v) = A @ [g(vx; kx), g(vy; ky)] + b, with g the normalized tanh
    family shared with the drive chain; kappa = 0 degrades to pure affine.
    """

    affine: tuple               # ((a11, a12), (a21, a22)) mm per normalized unit
    offset: tuple               # (bx, by) mm
    kappa: tuple = (0.0, 0.0)   # per-axis saturation gain, >= 0
    residual_rms: float = 0.0   # mm
    config_hash: str = ""

    def __post_init__(self):
        a = np.asarray(self.affine, dtype=float)
        if a.shape != (2, 2):
            raise ValueError("affine must be 2x2")
        if abs(np.linalg.det(a)) <= 1e-9:
            raise ValueError("affine matrix is not invertible")
        if self.kappa[0] < 0 or self.kappa[1] < 0:
            raise ValueError("kappa must be >= 0")
        object.__setattr__(self, "affine", ((a[0, 0], a[0, 1]), (a[1, 0], a[1, 1])))
        object.__setattr__(self, "offset", (float(self.offset[0]), float(self.offset[1])))
        object.__setattr__(self, "kappa", (float(self.kappa[0]), float(self.kappa[1])))

    def predict(self, v: VoltageCoord) -> tuple:
        gx = saturation(v.vx, self.kappa[0])
        gy = saturation(v.vy, self.kappa[1])
        (a11, a12), (a21, a22) = self.affine
        return (
            a11 * gx + a12 * gy + self.offset[0],
            a21 * gx + a22 * gy + self.offset[1],
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "cryoscan-mapping-model/1",
                "affine_mm_per_unit": [list(self.affine[0]), list(self.affine[1])],
                "offset_mm": list(self.offset),
                "kappa": list(self.kappa),
                "residual_rms_mm": self.residual_rms,
                "config_hash": self.config_hash,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "MappingModel":
        obj = json.loads(text)
        if obj.get("format") != "cryoscan-mapping-model/1":
            raise ValueError("not a cryoscan mapping-model file")
        return MappingModel(
            affine=tuple(tuple(row) for row in obj["affine_mm_per_unit"]),
            offset=tuple(obj["offset_mm"]),
            kappa=tuple(obj["kappa"]),
            residual_rms=float(obj["residual_rms_mm"]),
            config_hash=obj.get("config_hash", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def load(path) -> "MappingModel":
        return MappingModel.from_json(Path(path).read_text())


def _mutual_nearest(src_pts: np.ndarray, dst_pts: np.ndarray):
    """Mutual nearest-neighbor pairs between two point sets."""
    d2 = ((src_pts[:, None, :] - dst_pts[None, :, :]) ** 2).sum(axis=2)
    fwd = d2.argmin(axis=1)
    bwd = d2.argmin(axis=0)
    return [(i, int(j)) for i, j in enumerate(fwd) if bwd[j] == i]


def _refine_pairs(pts, holes, pairs, rounds=4):
    """Re-match by mutual NN under the affine fit of the current pairs."""
    for _ in range(rounds):
        if len(pairs) < 3:
            return pairs, math.inf
        X = np.column_stack([pts[[i for i, _ in pairs]], np.ones(len(pairs))])
        sol, _, rank, _ = np.linalg.lstsq(X, holes[[j for _, j in pairs]], rcond=None)
        if rank < 3:
            return pairs, math.inf
        mapped = np.column_stack([pts, np.ones(len(pts))]) @ sol
        new_pairs = _mutual_nearest(mapped, holes)
        if new_pairs == pairs:
            break
        pairs = new_pairs
    if len(pairs) < 3:
        return pairs, math.inf
    X = np.column_stack([pts[[i for i, _ in pairs]], np.ones(len(pairs))])
    sol, _, _, _ = np.linalg.lstsq(X, holes[[j for _, j in pairs]], rcond=None)
    res = X @ sol - holes[[j for _, j in pairs]]
    return pairs, float(np.sqrt((res**2).sum(axis=1).mean()))


def _match_correspondences(pts: np.ndarray, holes: np.ndarray):
    """Blob <-> hole assignment, assuming the plate orientation is roughly
    known a priori.

    Both clouds are centered and RMS-normalized (the Procrustes translation
    and scale); rotations within +-45 degrees of identity then seed
    mutual-nearest-neighbor matches refined under their own affine fits.
    The orientation prior is essential: for a product-grid plate every
    order-preserving or order-reversing per-axis relabeling (grid flips,
    transposes) is absorbed exactly by the affine+kappa family, so a global
    orientation search cannot distinguish them. Residual ties among the
    admissible candidates are still reported as ambiguities rather than
    silently picking one.
    """
    def normalized(cloud):
        mu = cloud.mean(axis=0)
        x = cloud - mu
        rms = math.sqrt((x**2).sum() / len(cloud))
        return x / rms if rms > 0 else x

    ps, hs = normalized(pts), normalized(holes)
    candidates = {}
    for deg in (-45, -30, -15, 0, 15, 30, 45):
        ang = math.radians(deg)
        c, s = math.cos(ang), math.sin(ang)
        R = np.array([[c, -s], [s, c]])
        pairs = _mutual_nearest(ps @ R.T, hs)
        if len(pairs) < 3:
            continue
        pairs, rms = _refine_pairs(pts, holes, pairs)
        if len(pairs) < 3 or not math.isfinite(rms):
            continue
        key = tuple(sorted(pairs))
        best = candidates.get(key)
        if best is None or rms < best:
            candidates[key] = rms
    if not candidates:
        raise DegenerateGeometryError("no viable blob/hole correspondence found")

    # re-score the leading candidates under the full affine+kappa family;
    # the affine-only residual unfairly penalizes the true assignment when
    # the saturation warp is strong
    n_best = max(len(k) for k in candidates)
    leads = sorted(
        (kv for kv in candidates.items() if len(kv[0]) == n_best),
        key=lambda kv: kv[1],
    )[:6]
    scored = []
    for pairs_key, _ in leads:
        v = pts[[i for i, _ in pairs_key]]
        y = holes[[j for _, j in pairs_key]]
        try:
            _, rms = _fit_family(v, y, fit_kappa=len(pairs_key) >= 5)
        except (CalibrationError, np.linalg.LinAlgError):
            continue
        scored.append((list(pairs_key), rms))
    if not scored:
        raise DegenerateGeometryError("no viable blob/hole correspondence found")
    scored.sort(key=lambda c: c[1])
    best_pairs, best_rms = scored[0]
    if len(scored) > 1:
        alt_pairs, alt_rms = scored[1]
        if alt_rms <= max(3.0 * best_rms, 1e-9):
            raise DegenerateGeometryError(
                "ambiguous correspondences: two assignments fit equally well "
                f"(rms {best_rms:.3g} vs {alt_rms:.3g} mm); the hole pattern "
                "is too symmetric to orient"
            )
    return best_pairs


def _collinear(points: np.ndarray, tol=1e-6) -> bool:
    if len(points) < 3:
        return True
    centered = points - points.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    return svals[1] <= tol * max(svals[0], 1.0)


def _fit_family(v: np.ndarray, y: np.ndarray, fit_kappa: bool):
    """Damped least-squares fit of y = A g(v; kappa) + b on matched pairs.

    Returns ((A, b, kappa), rms). kappa is parameterized as s^2 to keep the
    Levenberg-Marquardt problem unconstrained while enforcing kappa >= 0.
    """
    X = np.column_stack([v, np.ones(len(v))])
    sol, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 3:
        raise DegenerateGeometryError("rank-deficient correspondences")
    A0 = sol[:2].T
    b0 = sol[2]

    if not fit_kappa:
        res = v @ A0.T + b0 - y
        rms = float(np.sqrt((np.linalg.norm(res, axis=1) ** 2).mean()))
        return (A0, b0, np.zeros(2)), rms

    def unpack(p):
        return p[:4].reshape(2, 2), p[4:6], p[6:8] ** 2

    def residuals(p):
        A, b, kap = unpack(p)
        gx = np.tanh(kap[0] * v[:, 0]) / np.tanh(kap[0]) if kap[0] > 0 else v[:, 0]
        gy = np.tanh(kap[1] * v[:, 1]) / np.tanh(kap[1]) if kap[1] > 0 else v[:, 1]
        return (np.column_stack([gx, gy]) @ A.T + b - y).ravel()

    p0 = np.concatenate([A0.ravel(), b0, [0.8, 0.8]])
    sol = optimize.least_squares(
        residuals, p0, method="lm", max_nfev=20000,
        ftol=_FIT_TOL, xtol=_FIT_TOL, gtol=_FIT_TOL,
    )
    if not sol.success:
        raise CalibrationError(f"mapping fit did not converge: {sol.message}")
    A, b, kap = unpack(sol.x)
    res = sol.fun.reshape(-1, 2)
    rms = float(np.sqrt((np.linalg.norm(res, axis=1) ** 2).mean()))
    return (A, b, kap), rms


def fit_mapping(
    blobs: BlobSet,
    known_holes,
    residual_gate_mm: float = 0.5,
    fit_kappa: bool | None = None,
) -> MappingModel:
    """Fit the voltage -> position mapping from detected blobs and the known
    hole positions (mm).

    Correspondence is mutual nearest neighbor after a Procrustes similarity
    initialization; ambiguous or degenerate geometry fails loudly. At least
    3 non-collinear pairs fit the affine part; 5 or more also fit the
    per-axis saturation gains (damped least squares). The residual RMS must
    pass ``residual_gate_mm``.
    """
    holes = np.asarray([[h[0], h[1]] for h in known_holes], dtype=float)
    pts = blobs.centroids() if len(blobs) else np.zeros((0, 2))
    if len(pts) < 3 or len(holes) < 3:
        raise DegenerateGeometryError(
            f"need at least 3 blob/hole correspondences, got {len(pts)} blobs "
            f"and {len(holes)} holes"
        )
    if _collinear(holes):
        raise DegenerateGeometryError("known holes are collinear; mapping is unconstrained")
    if _collinear(pts):
        raise DegenerateGeometryError("blob centroids are collinear; mapping is unconstrained")

    pairs = _match_correspondences(pts, holes)
    expected = min(len(pts), len(holes))
    if len({j for _, j in pairs}) != len(pairs):
        raise DegenerateGeometryError("ambiguous correspondences (non-bijective matching)")
    if len(pairs) < expected:
        raise DegenerateGeometryError(
            f"only {len(pairs)} of {expected} expected correspondences matched; "
            "the scan may not have covered every hole"
        )

    v = pts[[i for i, _ in pairs]]
    y = holes[[j for _, j in pairs]]
    if fit_kappa is None:
        fit_kappa = len(pairs) >= 5
    (A, b, kap), rms = _fit_family(v, y, fit_kappa)
    model = MappingModel(affine=tuple(map(tuple, A)), offset=tuple(b),
                         kappa=tuple(kap), residual_rms=rms)

    if model.residual_rms > residual_gate_mm:
        raise CalibrationError(
            f"calibration residual {model.residual_rms * 1e3:.0f} um exceeds the "
            f"{residual_gate_mm * 1e3:.0f} um gate",
            diagnostics={
                "residual_rms_mm": model.residual_rms,
                "n_pairs": len(pairs),
                "kappa": model.kappa,
            },
        )
    return model


_INVERT_TOL_MM = 1e-3   # converge to better than 1 um


def invert_mapping(model: MappingModel, target) -> VoltageCoord:
    """Solve predict(v) = target (mm) by damped Newton iteration.

    Starts from the affine-inverse guess; converges below 1 um. Targets
    outside the image of [-1, 1]^2 raise OutOfRangeError carrying the
    nearest reachable point.
    """
    A = np.asarray(model.affine)
    b = np.asarray(model.offset)
    ty = np.asarray(target, dtype=float)
    kx, ky = model.kappa

    g_inv = np.linalg.solve(A, ty - b)
    v = np.array([
        saturation_inverse(min(1.0, max(-1.0, g_inv[0])), kx),
        saturation_inverse(min(1.0, max(-1.0, g_inv[1])), ky),
    ])

    def f_and_jac(vv):
        gx, gy = saturation(vv[0], kx), saturation(vv[1], ky)
        pred = A @ np.array([gx, gy]) + b
        if kx == 0.0:
            dgx = 1.0
        else:
            dgx = kx / (math.cosh(kx * vv[0]) ** 2 * math.tanh(kx))
        if ky == 0.0:
            dgy = 1.0
        else:
            dgy = ky / (math.cosh(ky * vv[1]) ** 2 * math.tanh(ky))
        return pred - ty, A @ np.diag([dgx, dgy])

    err, jac = f_and_jac(v)
    for _ in range(100):
        if np.linalg.norm(err) < _INVERT_TOL_MM:
            break
        try:
            step = np.linalg.solve(jac, -err)
        except np.linalg.LinAlgError:
            raise CalibrationError("singular Jacobian while inverting the mapping")
        lam = 1.0
        for _ in range(30):    # damping: halve until the error norm decreases
            # iterates stay in a modest box; far targets fail the range check
            cand = np.clip(v + lam * step, -2.0, 2.0)
            cand_err, cand_jac = f_and_jac(cand)
            if np.linalg.norm(cand_err) < np.linalg.norm(err):
                v, err, jac = cand, cand_err, cand_jac
                break
            lam *= 0.5
        else:
            break

    inside = bool(np.all(np.abs(v) <= 1.0 + 1e-9))
    if np.linalg.norm(err) >= _INVERT_TOL_MM or not inside:
        clipped = VoltageCoord(min(1.0, max(-1.0, v[0])), min(1.0, max(-1.0, v[1])))
        raise OutOfRangeError(ty, clipped, model.predict(clipped))
    return VoltageCoord(min(1.0, max(-1.0, float(v[0]))), min(1.0, max(-1.0, float(v[1]))))
