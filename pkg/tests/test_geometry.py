import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from hypertrav.errors import DataError, DegenerateCloud
from hypertrav.geometry import (AugmentPolicy, Plane, PointCloud, RansacConfig, augment,
                                estimate_ground_slope, flip_x, ransac_ground, read_cloud,
                                read_gspc, read_ply, rotate_pitch, rotate_yaw, rot_y, slope_angle,
                                write_gspc, write_ply)
from hypertrav.supervision import SupervisionWindow, rasterize
from hypertrav.voxel import GridConfig

angles = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)


def random_cloud(rng, n=50, labels=True):
    pts = rng.normal(size=(n, 3)) * 3.0
    lab = rng.integers(0, 5, n) if labels else None
    return PointCloud(pts, lab)


def planted_plane(rng, tilt_deg, n=500, noise=0.01, outlier_frac=0.0):
    """Points on z = tan(tilt) x plus noise, a fraction replaced by uniform clutter."""
    xy = rng.uniform(-5, 5, size=(n, 2))
    z = math.tan(math.radians(tilt_deg)) * xy[:, 0] + rng.normal(0, noise, n)
    pts = np.column_stack([xy, z])
    n_out = int(round(outlier_frac * n))
    pts[:n_out] = rng.uniform([-5, -5, -2], [5, 5, 2], size=(n_out, 3))
    return PointCloud(pts)


def test_flip_examples():
    c = PointCloud([[1.0, 2.0, 3.0]], [4])
    out = flip_x(c)
    assert out.points.tolist() == [[-1.0, 2.0, 3.0]]
    assert out.labels.tolist() == [4]
    assert len(flip_x(PointCloud(np.zeros((0, 3))))) == 0


def test_flip_is_exact_involution(rng):
    c = random_cloud(rng)
    assert np.array_equal(flip_x(flip_x(c)).points, c.points)


def test_yaw_quarter_turn():
    out = rotate_yaw(PointCloud([[1.0, 0.0, 0.0]]), math.pi / 2)
    np.testing.assert_allclose(out.points[0], [0.0, 1.0, 0.0], atol=1e-12)
    c = PointCloud([[0.3, -1.2, 5.0]])
    assert np.array_equal(rotate_yaw(c, 0.0).points, c.points)


def test_pitch_convention():
    out = rotate_pitch(PointCloud([[1.0, 0.0, 0.0]]), math.pi / 2)
    np.testing.assert_allclose(out.points[0], [0.0, 0.0, -1.0], atol=1e-12)
    np.testing.assert_array_equal(rot_y(0.0), np.eye(3))


@given(psi=angles, theta=angles, seed=st.integers(0, 2**31))
def test_transforms_are_isometries(psi, theta, seed):
    c = random_cloud(np.random.default_rng(seed), n=30)
    ref = pdist(c.points)
    for out in (flip_x(c), rotate_yaw(c, psi), rotate_pitch(c, theta)):
        np.testing.assert_allclose(pdist(out.points), ref, atol=1e-9, rtol=0)
    yawed = rotate_yaw(c, psi)
    np.testing.assert_array_equal(yawed.points[:, 2], c.points[:, 2])
    np.testing.assert_allclose(np.linalg.norm(yawed.points, axis=1), np.linalg.norm(c.points, axis=1),
                               atol=1e-9)
    np.testing.assert_array_equal(rotate_pitch(c, theta).points[:, 1], c.points[:, 1])


@given(psi=angles, seed=st.integers(0, 2**31))
def test_rotations_invert(psi, seed):
    c = random_cloud(np.random.default_rng(seed), n=20)
    np.testing.assert_allclose(rotate_yaw(rotate_yaw(c, psi), -psi).points, c.points, atol=1e-9)
    np.testing.assert_allclose(rotate_pitch(rotate_pitch(c, psi), -psi).points, c.points, atol=1e-9)


def test_plane_canonical_orientation():
    p = Plane([0.0, 0.0, -2.0], 4.0)
    np.testing.assert_allclose(p.normal, [0, 0, 1])
    assert p.offset == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        Plane([0.0, 0.0, 0.0], 1.0)


@pytest.mark.parametrize("deg", [0.0, 10.0, 45.0])
def test_slope_angle(deg):
    a = math.radians(deg)
    assert slope_angle(Plane([math.sin(a), 0.0, math.cos(a)], 0.0)) == pytest.approx(a, abs=1e-9)


@given(nx=st.floats(-1, 1), ny=st.floats(-1, 1), nz=st.floats(0.01, 1))
def test_slope_angle_range(nx, ny, nz):
    assert 0.0 <= slope_angle(Plane([nx, ny, nz], 0.0)) <= math.pi / 2


def test_ransac_flat_plane(rng):
    plane, frac = ransac_ground(planted_plane(rng, 0.0), RansacConfig(seed=1))
    assert math.degrees(slope_angle(plane)) < 1.0
    assert 0.0 <= frac <= 1.0


def test_ransac_tilted_with_outliers():
    errs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        plane, frac = ransac_ground(planted_plane(rng, 5.0, outlier_frac=0.2), RansacConfig(seed=seed))
        errs.append(abs(math.degrees(slope_angle(plane)) - 5.0))
        assert 0.0 <= frac <= 1.0
    assert max(errs) < 1.0


def test_ransac_deterministic(rng):
    c = planted_plane(rng, 3.0, outlier_frac=0.3)
    a = ransac_ground(c, RansacConfig(seed=7))
    b = ransac_ground(c, RansacConfig(seed=7))
    assert np.array_equal(a[0].normal, b[0].normal) and a[1] == b[1]


def test_ransac_degenerate():
    with pytest.raises(DegenerateCloud):
        ransac_ground(PointCloud([[0, 0, 0], [1, 0, 0]]))
    line = PointCloud(np.outer(np.arange(10.0), [1.0, 2.0, 0.5]))
    with pytest.raises(DegenerateCloud):
        ransac_ground(line, RansacConfig(iterations=20))


def test_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(iterations=0)
    with pytest.raises(ValueError):
        RansacConfig(inlier_dist=0.0)
    with pytest.raises(ValueError):
        AugmentPolicy(yaw_range=(0.5, -0.5))
    with pytest.raises(ValueError):
        AugmentPolicy(yaw_range=(-4.0, 0.0))
    with pytest.raises(ValueError):
        AugmentPolicy(pitch_slope_gate=-0.1)
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), [1, 2])


def test_augment_disabled_is_identity(rng):
    c = random_cloud(rng)
    traj = rng.normal(size=(10, 2))
    out, t = augment(c, traj, AugmentPolicy.disabled(), np.random.default_rng(0))
    assert np.array_equal(out.points, c.points)
    assert np.array_equal(t, traj)


def test_augment_deterministic(rng):
    c = planted_plane(rng, 4.0)
    traj = rng.uniform(-3, 3, size=(10, 2))
    pol = AugmentPolicy(flip_prob=0.5)
    a = augment(c, traj, pol, np.random.default_rng(3))
    b = augment(c, traj, pol, np.random.default_rng(3))
    assert np.array_equal(a[0].points, b[0].points) and np.array_equal(a[1], b[1])


def test_pitch_gated_on_steep_ground(rng):
    c = planted_plane(rng, 15.0)
    assert math.degrees(estimate_ground_slope(c, AugmentPolicy())) > 10.0
    pol = AugmentPolicy(flip_prob=0.0, yaw_range=(0.0, 0.0), pitch_enabled=True)
    for seed in range(5):
        out, _ = augment(c, np.zeros((1, 2)), pol, np.random.default_rng(seed))
        assert np.array_equal(out.points, c.points)
    # flip and yaw still happen
    pol = AugmentPolicy(flip_prob=1.0, yaw_range=(0.3, 0.3))
    out, _ = augment(c, np.zeros((1, 2)), pol, np.random.default_rng(0))
    expect = rotate_yaw(flip_x(c), 0.3).points
    np.testing.assert_allclose(out.points, expect, atol=1e-12)


def test_pitch_applied_on_gentle_ground(rng):
    c = planted_plane(rng, 5.0)
    pol = AugmentPolicy(flip_prob=0.0, yaw_range=(0.0, 0.0))
    out, _ = augment(c, np.zeros((1, 2)), pol, np.random.default_rng(1))
    assert not np.array_equal(out.points, c.points)
    # still only a rotation about y
    np.testing.assert_array_equal(out.points[:, 1], c.points[:, 1])


def test_augment_keeps_positive_cells(rng):
    grid = GridConfig.centered(12.0, 12.0, 0.15)
    xy = rng.uniform(-5, 5, size=(4000, 2))
    cloud = PointCloud(np.column_stack([xy, 0.02 * xy[:, 0]]))
    # samples farther apart than a cell diagonal, so each lands in its own cell
    s = np.linspace(-4, 4, 25)
    traj = np.column_stack([s, 0.1 * s ** 2])
    tau = np.ones(len(traj))
    before = rasterize(SupervisionWindow(traj, tau), grid).positive.sum()
    pol = AugmentPolicy(flip_prob=0.5, pitch_enabled=True)
    for seed in range(10):
        out, t2 = augment(cloud, traj, pol, np.random.default_rng(seed))
        after = rasterize(SupervisionWindow(t2, tau), grid).positive.sum()
        assert after == before
        assert np.linalg.norm(t2, axis=1) == pytest.approx(np.linalg.norm(traj, axis=1), abs=0.05)


def test_ply_round_trip(tmp_path, rng):
    c = random_cloud(rng)
    write_ply(c, tmp_path / "a.ply")
    back = read_ply(tmp_path / "a.ply")
    assert np.array_equal(back.points, c.points) and np.array_equal(back.labels, c.labels)
    bare = random_cloud(rng, labels=False)
    write_ply(bare, tmp_path / "b.ply")
    assert read_cloud(tmp_path / "b.ply").labels is None


def test_gspc_round_trip(tmp_path, rng):
    c = random_cloud(rng)
    write_gspc(c, tmp_path / "a.gspc")
    back = read_gspc(tmp_path / "a.gspc")
    np.testing.assert_array_equal(back.points, c.points.astype(np.float32))
    assert np.array_equal(back.labels, c.labels)
    raw = (tmp_path / "a.gspc").read_bytes()
    assert raw[:4] == b"GSPC" and len(raw) == 12 + 50 * 14


def test_bad_files(tmp_path):
    (tmp_path / "x.ply").write_text("not a ply\n")
    with pytest.raises(DataError):
        read_ply(tmp_path / "x.ply")
    (tmp_path / "x.gspc").write_bytes(b"GSPC\x05\x00\x00\x00\x00\x00\x00\x00")
    with pytest.raises(DataError):
        read_gspc(tmp_path / "x.gspc")
    with pytest.raises(DataError):
        read_cloud(tmp_path / "missing.ply")
