import math

import numpy as np
import pytest

from hypertrav.errors import NoPathError, SpecError
from hypertrav.evaluator import ANOMALOUS, EMPTY, NORMAL
from hypertrav.supervision import ScoreParams, build_window
from hypertrav.synth import (GROUND, HIGH_BUSH, LEGGED, LOW_BUSH, LOW_BUSH_MAX, ROCK, TREE, WHEELED,
                             Obstacle, RobotProfile, SlopePatch, WorldSpec, extract_scan,
                             generate_trajectory, generate_world, terrain_height, traversable_mask)
from hypertrav.voxel import GridConfig

SMALL = dict(extent=(14.0, 14.0), density=60.0, n_rocks=6, n_low_bushes=6, n_high_bushes=4, n_trees=3)


@pytest.fixture(scope="module")
def world():
    return generate_world(WorldSpec(**SMALL, n_slopes=2, seed=4))


def test_world_is_seeded(world):
    again = generate_world(WorldSpec(**SMALL, n_slopes=2, seed=4))
    assert np.array_equal(world.cloud.points, again.cloud.points)
    assert np.array_equal(world.cloud.labels, again.cloud.labels)
    other = generate_world(WorldSpec(**SMALL, n_slopes=2, seed=5))
    assert not np.array_equal(world.cloud.points[:100], other.cloud.points[:100])


def test_every_point_labeled(world):
    assert world.cloud.labels.shape[0] == len(world.cloud)
    assert set(np.unique(world.cloud.labels)) <= {GROUND, ROCK, LOW_BUSH, HIGH_BUSH, TREE}


def test_obstacle_free_world_is_all_normal():
    w = generate_world(WorldSpec(extent=(6.0, 6.0), density=80.0, n_rocks=0, n_low_bushes=0,
                                 n_high_bushes=0, n_trees=0))
    oracle = w.oracle(WHEELED)
    assert set(np.unique(oracle)) <= {EMPTY, NORMAL}


def test_footprints_marked_anomalous(world):
    oracle = world.oracle(WHEELED)
    g = world.grid
    pts, lab = world.cloud.points, world.cloud.labels
    for ob in world.obstacles:
        near = np.hypot(pts[:, 0] - ob.center[0], pts[:, 1] - ob.center[1]) <= ob.radius + 1e-9
        i, j, inside = g.cell_indices(pts[near & (lab == ob.kind)])
        assert inside.any()
        assert np.all(oracle[i[inside], j[inside]] == ANOMALOUS)
    # every cell holding an obstacle point is anomalous
    i, j, _ = g.cell_indices(pts[lab != GROUND])
    assert np.all(oracle[i, j] == ANOMALOUS)


def test_class_height_conventions(world):
    pts, lab = world.cloud.points, world.cloud.labels
    above = pts[:, 2] - world.height(pts[:, 0], pts[:, 1])
    assert np.all(above[lab == LOW_BUSH] < LOW_BUSH_MAX)
    for ob in world.obstacles:
        if ob.kind in (HIGH_BUSH, TREE):
            near = np.hypot(pts[:, 0] - ob.center[0], pts[:, 1] - ob.center[1]) <= ob.radius + 1e-9
            sel = near & (lab == ob.kind)
            assert (pts[sel, 2] - world.height(*ob.center)).max() >= 0.6


def test_profiles_share_geometry(world):
    legged = world.oracle(LEGGED)
    wheeled = world.oracle(WHEELED)
    assert np.array_equal(legged == EMPTY, wheeled == EMPTY)
    assert np.all((legged == ANOMALOUS) <= (wheeled == ANOMALOUS))
    with pytest.raises(SpecError):
        RobotProfile("x", frozenset({ROCK}))


def test_trajectory_stays_traversable(world):
    traj = generate_trajectory(world, WHEELED, 40, seed=2)
    oracle = world.oracle(WHEELED)
    free = traversable_mask(world, WHEELED)
    i, j, inside = world.grid.cell_indices(np.array([s.position for s in traj]))
    assert inside.all()
    assert np.all(oracle[i, j] != ANOMALOUS)
    assert free[i, j].mean() > 0.9
    speeds = np.hypot(*np.array([s.v_cmd for s in traj]).T)
    np.testing.assert_allclose(speeds, WHEELED.nominal_speed, rtol=1e-9)
    again = generate_trajectory(world, WHEELED, 40, seed=2)
    assert again == traj


def test_zero_noise_profile_gives_constant_scores(world):
    quiet = RobotProfile("quiet", frozenset({GROUND}), 1.0, {GROUND: 0.0})
    traj = generate_trajectory(world, quiet, 30, seed=1)
    p = ScoreParams()
    win = build_window(traj, 0, 29, p)
    expect = 1 / (1 + math.exp(-p.eta * p.v_th))
    np.testing.assert_allclose(win.taus, expect, atol=1e-15)


def test_no_path_raises():
    wall = tuple(Obstacle(TREE, (3.0, y), 0.5, 4.0) for y in np.arange(0.5, 6.0, 0.5))
    spec = WorldSpec(extent=(6.0, 6.0), density=40.0, n_rocks=0, n_low_bushes=0, n_high_bushes=0,
                     n_trees=0, obstacles=wall)
    w = generate_world(spec)
    with pytest.raises(NoPathError):
        generate_trajectory(w, WHEELED, 10, start=(1.0, 3.0), goal=(5.0, 3.0))


def test_corridors_stay_clear():
    line = ((1.0, 7.0), (13.0, 7.0))
    spec = WorldSpec(**{**SMALL, "n_rocks": 60, "n_high_bushes": 40}, corridors=(line,), corridor_width=2.0)
    w = generate_world(spec)
    for ob in w.obstacles:
        assert abs(ob.center[1] - 7.0) >= ob.radius + 1.0 - 1e-9 or not 1.0 <= ob.center[0] <= 13.0


def test_spec_validation():
    with pytest.raises(SpecError):
        WorldSpec(density=0.0)
    with pytest.raises(SpecError):
        WorldSpec(slopes=(SlopePatch((1.0, 1.0), 2.0, math.radians(30)),))
    with pytest.raises(SpecError):
        WorldSpec(extent=(5.0, 5.0), obstacles=(Obstacle(ROCK, (0.1, 2.0), 0.5, 0.5),))
    with pytest.raises(SpecError):
        WorldSpec(n_rocks=-1)


def test_slope_patch_peak():
    p = SlopePatch((0.0, 0.0), 4.0, math.radians(10))
    spec = WorldSpec(slopes=(p,))
    r = np.linspace(0, 4, 4001)
    h = terrain_height(spec, (p,), r, np.zeros_like(r))
    assert np.max(np.abs(np.diff(h) / np.diff(r))) == pytest.approx(math.tan(math.radians(10)), rel=1e-3)


def test_extract_scan_frame(world):
    grid = GridConfig.centered(6.0, 6.0, 0.15)
    pose = (7.0, 7.0, math.pi / 2)
    scan = extract_scan(world, pose, grid)
    _, _, inside = grid.cell_indices(scan.points)
    assert inside.all() and scan.labels.shape[0] == len(scan)
    # robot-frame x is world +y when heading north
    back = np.column_stack([7.0 - scan.points[:, 1], 7.0 + scan.points[:, 0]])
    pts = world.cloud.points
    tree = {tuple(np.round(p, 9)) for p in pts[:, :2]}
    assert all(tuple(np.round(b, 9)) in tree for b in back[:50])

