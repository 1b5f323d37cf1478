import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cryoscan.optics import (
    BeamSpot,
    Ray,
    SpotModelConfig,
    TraceMissError,
    aperture_power,
    default_layout,
    pose_to_normal,
    reflect,
    scan_extent,
    spot_profile,
    trace_to_device,
)
from cryoscan.steering import ElectricalConfig, MirrorPose, VoltageCoord, command_to_pose

LAYOUT = default_layout()
CFG = ElectricalConfig()


def chain(vx, vy):
    return command_to_pose(VoltageCoord(vx, vy), CFG)


class TestReflect:
    def test_normal_incidence_reverses(self):
        r = reflect(Ray((0, 0, 5), (0, 0, -1)), (0, 0, 0), (0, 0, 1))
        assert r.direction == pytest.approx((0, 0, 1))
        assert r.origin == pytest.approx((0, 0, 0))

    def test_45_degree_fold(self):
        inv = 1 / math.sqrt(2)
        r = reflect(Ray((-5, 0, 0), (1, 0, 0)), (0, 0, 0), (-inv, 0, inv))
        assert r.direction == pytest.approx((0, 0, 1), abs=1e-15)

    def test_matches_vector_algebra_oracle(self):
        # independently coded reflection formula on random rays and planes
        rng = np.random.default_rng(42)
        for _ in range(100):
            origin = rng.uniform(-10, 10, 3)
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            n = rng.standard_normal(3)
            n /= np.linalg.norm(n)
            p = rng.uniform(-5, 5, 3)
            denom = float(d @ n)
            t = float((p - origin) @ n) / denom
            if abs(denom) < 1e-6 or t <= 1e-6:
                continue
            hit = origin + t * d
            refl = d - 2 * (d @ n) * n
            got = reflect(Ray(tuple(origin), tuple(d)), tuple(p), tuple(n))
            assert np.allclose(got.origin, hit, atol=1e-12)
            assert np.allclose(got.direction, refl, atol=1e-12)

    def test_parallel_ray_rejected(self):
        with pytest.raises(TraceMissError):
            reflect(Ray((0, 0, 1), (1, 0, 0)), (5, 5, 0), (0, 0, 1))

    def test_direction_norm_preserved(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            r = reflect(Ray((0, 0, 5), tuple(d if d[2] < 0 else -d)), (0, 0, 0), (0, 0, 1))
            assert math.isclose(sum(c * c for c in r.direction), 1.0, abs_tol=1e-12)


class TestPoseToNormal:
    def test_zero_pose_is_rest_normal(self):
        assert pose_to_normal(MirrorPose(0, 0), LAYOUT) == pytest.approx(
            LAYOUT.mems_rest_normal
        )

    def test_inverse_rotations_compose_to_identity(self):
        a = 0.04
        n1 = pose_to_normal(MirrorPose(a, 0), LAYOUT)
        # rotating back about the same mirror axis restores the rest normal
        n2 = Rotation.from_rotvec(-a * np.array(LAYOUT.mems_axis_x)).apply(n1)
        assert np.allclose(n2, LAYOUT.mems_rest_normal, atol=1e-12)

    def test_matches_quaternion_oracle(self):
        # intrinsic x-then-rotated-y composition via scipy quaternions
        ax = np.array(LAYOUT.mems_axis_x)
        n0 = np.array(LAYOUT.mems_rest_normal)
        ay0 = np.cross(n0, ax)
        rng = np.random.default_rng(9)
        for _ in range(100):
            tx, ty = rng.uniform(-0.05, 0.05, 2)
            r1 = Rotation.from_rotvec(tx * ax)
            ay = r1.apply(ay0)
            r2 = Rotation.from_rotvec(ty * ay)
            expected = r2.apply(r1.apply(n0))
            got = pose_to_normal(MirrorPose(tx, ty), LAYOUT)
            assert np.allclose(got, expected, atol=1e-10)

    def test_tilt_range_guard(self):
        with pytest.raises(ValueError):
            pose_to_normal(MirrorPose(1.0, 0), LAYOUT)


def _oracle_trace(pose, layout=LAYOUT):
    """Independent two-bounce trace in numpy (hand-composed reflections)."""
    ax = np.array(layout.mems_axis_x)
    n0 = np.array(layout.mems_rest_normal)
    ay = Rotation.from_rotvec(pose.tilt_x * ax).apply(np.cross(n0, ax))
    n = Rotation.from_rotvec(pose.tilt_y * ay).apply(
        Rotation.from_rotvec(pose.tilt_x * ax).apply(n0)
    )
    o = np.array(layout.focuser_origin)
    d = np.array(layout.focuser_direction)
    pivot = np.array(layout.mems_pivot)
    t = (pivot - o) @ n / (d @ n)
    p1 = o + t * d
    d1 = d - 2 * (d @ n) * n
    sp = np.array(layout.stationary_mirror.point)
    sn = np.array(layout.stationary_mirror.normal)
    t2 = (sp - p1) @ sn / (d1 @ sn)
    p2 = p1 + t2 * d1
    d2 = d1 - 2 * (d1 @ sn) * sn
    dp = np.array(layout.device_plane.point)
    dn = np.array(layout.device_plane.normal)
    t3 = (dp - p2) @ dn / (d2 @ dn)
    p3 = p2 + t3 * d2
    return (p3 - dp) @ np.array(layout.device_plane.e_u), (p3 - dp) @ np.array(
        layout.device_plane.e_v
    )


class TestTrace:
    def test_rest_pose_hits_origin(self):
        u, v = trace_to_device(MirrorPose(0, 0), LAYOUT)
        assert abs(u) < 1e-9 and abs(v) < 1e-9

    def test_deflection_is_twice_tilt(self):
        # normal incidence at rest: the reflection law doubles the tilt
        for tilt in (0.005, 0.02, 0.05):
            u, v = trace_to_device(MirrorPose(tilt, 0), LAYOUT)
            u0, v0 = trace_to_device(MirrorPose(0, 0), LAYOUT)
            lever = 140.0
            assert math.hypot(u - u0, v - v0) == pytest.approx(
                lever * math.tan(2 * tilt), rel=1e-9
            )

    def test_mirror_symmetric_poses(self):
        for a in (0.01, 0.03, 0.05):
            up, vp = trace_to_device(MirrorPose(a, 0), LAYOUT)
            um, vm = trace_to_device(MirrorPose(-a, 0), LAYOUT)
            assert up == pytest.approx(-um, abs=1e-9)
            assert vp == pytest.approx(-vm, abs=1e-9)

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            pose = MirrorPose(*rng.uniform(-0.055, 0.055, 2))
            got = trace_to_device(pose, LAYOUT)
            want = _oracle_trace(pose)
            assert abs(got[0] - want[0]) < 1e-9
            assert abs(got[1] - want[1]) < 1e-9

    def test_specific_pose_against_oracle(self):
        got = trace_to_device(MirrorPose(0.005, 0.003), LAYOUT)
        want = _oracle_trace(MirrorPose(0.005, 0.003))
        assert got == pytest.approx(want, abs=1e-9)

    def test_full_chain_odd_under_command_negation(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            vx, vy = rng.uniform(-1, 1, 2)
            up, vp = trace_to_device(chain(vx, vy), LAYOUT)
            um, vm = trace_to_device(chain(-vx, -vy), LAYOUT)
            assert abs(up + um) < 1e-9
            assert abs(vp + vm) < 1e-9

    def test_rest_path_length_equals_focal_length(self):
        assert LAYOUT.rest_path_length() == pytest.approx(LAYOUT.focal_length, abs=1e-6)

    def test_alternate_focal_lengths_scale(self):
        for f in (140.0, 200.0):
            layout = default_layout(focal_length=f)
            assert layout.rest_path_length() == pytest.approx(f, abs=1e-6)

    def test_miss_carries_last_segment(self):
        # a huge tilt walks the beam off the stationary mirror aperture
        with pytest.raises(TraceMissError) as err:
            trace_to_device(MirrorPose(0.6, 0.0), LAYOUT)
        assert err.value.last_ray is not None


class TestScanExtent:
    def test_default_chain_spans_30mm(self):
        (u0, u1), (v0, v1), misses = scan_extent(LAYOUT, chain, 41)
        assert not misses
        assert u1 - u0 == pytest.approx(30.0, rel=1e-6)
        assert v1 - v0 == pytest.approx(30.0, rel=1e-6)

    def test_extent_halves_with_theta(self):
        # small-angle regime: the box scales linearly with the tilt range
        half = ElectricalConfig(
            theta_max_x=CFG.theta_max_x / 2, theta_max_y=CFG.theta_max_y / 2
        )

        def half_chain(vx, vy):
            return command_to_pose(VoltageCoord(vx, vy), half)

        (u0, u1), (v0, v1), _ = scan_extent(LAYOUT, half_chain, 41)
        assert u1 - u0 == pytest.approx(15.0, rel=0.01)
        assert v1 - v0 == pytest.approx(15.0, rel=0.01)

    def test_coarse_and_fine_grids_agree_for_linear_chain(self):
        # monotone map: the extremes sit on the grid corners
        box2 = scan_extent(LAYOUT, chain, 2)
        box101 = scan_extent(LAYOUT, chain, 101)
        for a, b in zip(box2[:2], box101[:2]):
            assert a[0] == pytest.approx(b[0], abs=1e-6)
            assert a[1] == pytest.approx(b[1], abs=1e-6)

    def test_resolution_guard(self):
        with pytest.raises(ValueError):
            scan_extent(LAYOUT, chain, 1)


class TestSpotProfile:
    CFG_SPOT = SpotModelConfig()

    def test_design_wavelength_gives_80um(self):
        spot = spot_profile((0, 0), 650.0, self.CFG_SPOT, 1e-6)
        assert spot.mean_diameter == pytest.approx(80.0)

    def test_broadband_preset_gives_170um(self):
        # the filtered broadband source is modeled by its effective offset
        # from the focuser design wavelength: 150 nm at 0.6 um/nm
        spot = spot_profile((0, 0), 800.0, self.CFG_SPOT, 1e-6)
        assert spot.mean_diameter == pytest.approx(170.0)

    def test_zero_slope_is_achromatic(self):
        cfg = SpotModelConfig(chromatic_slope=0.0)
        d1 = spot_profile((0, 0), 300.0, cfg, 1.0).mean_diameter
        d2 = spot_profile((0, 0), 1500.0, cfg, 1.0).mean_diameter
        assert d1 == d2 == 80.0

    def test_band_edges_enforced(self):
        spot_profile((0, 0), 180.0, self.CFG_SPOT, 1.0)
        spot_profile((0, 0), 2000.0, self.CFG_SPOT, 1.0)
        for bad in (179.9, 2500.0):
            with pytest.raises(ValueError):
                spot_profile((0, 0), bad, self.CFG_SPOT, 1.0)

    def test_ellipticity_split_preserves_mean(self):
        cfg = SpotModelConfig(ellipticity=1.8)
        spot = spot_profile((0, 0), 650.0, cfg, 1.0)
        assert spot.sigma_major / spot.sigma_minor == pytest.approx(1.8)
        assert (spot.sigma_major + spot.sigma_minor) / 2 == pytest.approx(20.0)


def _mc_aperture_fraction(spot, center, radius, n, rng):
    """Monte Carlo oracle: sample the Gaussian, count hits inside the hole."""
    c, s = math.cos(spot.orientation), math.sin(spot.orientation)
    xy = rng.standard_normal((n, 2)) * [spot.sigma_major * 1e-3, spot.sigma_minor * 1e-3]
    px = c * xy[:, 0] - s * xy[:, 1] + spot.center[0]
    py = s * xy[:, 0] + c * xy[:, 1] + spot.center[1]
    return ((px - center[0]) ** 2 + (py - center[1]) ** 2 <= radius**2).mean()


class TestAperturePower:
    def test_centered_circular_closed_form(self):
        # encircled energy of a circular Gaussian: 1 - exp(-R^2 / 2 sigma^2)
        spot = BeamSpot((0, 0), 50.0, 50.0, 0.0, 1.0, 650.0)
        got = aperture_power(spot, (0, 0), 2 * 50.0e-3)
        assert got == pytest.approx(1 - math.exp(-2), abs=1e-9)

    def test_huge_hole_captures_everything(self):
        spot = BeamSpot((0.2, -0.1), 60.0, 40.0, 0.3, 2.5, 650.0)
        got = aperture_power(spot, (0.2, -0.1), 10 * 60.0e-3)
        assert got / spot.total_power >= 0.9999

    def test_monotone_in_radius_and_bounded(self):
        spot = BeamSpot((0.1, 0.4), 55.0, 30.0, 1.0, 1.0, 650.0)
        last = 0.0
        for r in np.linspace(0.01, 0.5, 12):
            p = aperture_power(spot, (0.15, 0.35), r)
            assert p >= last - 1e-12
            assert p <= spot.total_power + 1e-12
            last = p

    def test_offset_elliptical_matches_monte_carlo(self):
        rng = np.random.default_rng(2024)
        for _ in range(5):
            spot = BeamSpot(
                center=tuple(rng.uniform(-1, 1, 2)),
                sigma_major=rng.uniform(40, 70),
                sigma_minor=rng.uniform(20, 39),
                orientation=rng.uniform(-1.5, 1.5),
                total_power=1.0,
                wavelength=650.0,
            )
            hole_c = spot.center + rng.uniform(-0.05, 0.05, 2)
            hole_r = rng.uniform(0.05, 0.15)
            got = aperture_power(spot, tuple(hole_c), hole_r)
            want = _mc_aperture_fraction(spot, hole_c, hole_r, 10**6, rng)
            assert abs(got - want) < 1e-3

    def test_radius_guard(self):
        spot = BeamSpot((0, 0), 50.0, 50.0, 0.0, 1.0, 650.0)
        with pytest.raises(ValueError):
            aperture_power(spot, (0, 0), 0.0)
