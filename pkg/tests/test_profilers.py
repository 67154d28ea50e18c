import math

import numpy as np
import pytest

from roborun.config import Physics
from roborun.mapping import FREE, OCCUPIED, InsertionBudget, OccupancyTree, PointCloud, integrate, sense
from roborun.planning import Trajectory
from roborun.profilers import (ProfileSnapshot, cluster_points, nearest_occupied, profile_distances, profile_gaps,
                               profile_volumes)
from roborun.world import EnvSpec, empty_world, world_from_obstacles

FULL = Physics(scale=1.0)
WORLD = EnvSpec.reference(1.0)
POSE = (0.0, 0.0, FULL.altitude)


def test_two_pillars_gap():
    r = 2.0
    gt = world_from_obstacles(WORLD, [(12.0, -(3.0 + r)), (12.0, 3.0 + r)], r)
    cloud = sense(gt, POSE, (1.0, 0.0), FULL)
    g_min, g_avg = profile_gaps(cloud, POSE, FULL.vox_min, FULL.p_max, (1.0, 0.0))
    assert g_min == pytest.approx(6.0, abs=2 * FULL.vox_min)


def test_three_pillars_mean_gap():
    r = 1.0
    ys = [-(2.0 + r), 2.0 + r, 2.0 + r + 2 * r + 8.0]
    gt = world_from_obstacles(WORLD, [(15.0, y) for y in ys], r)
    cloud = sense(gt, POSE, (1.0, 0.0), FULL)
    g_min, g_avg = profile_gaps(cloud, POSE, FULL.vox_min, FULL.p_max, (1.0, 0.0))
    assert g_min == pytest.approx(4.0, abs=2 * FULL.vox_min)
    assert g_avg == pytest.approx(6.0, abs=2 * FULL.vox_min)


def test_empty_cloud_gives_sentinel():
    cloud = sense(empty_world(WORLD), POSE, (1.0, 0.0), FULL)
    assert profile_gaps(cloud, POSE, FULL.vox_min, FULL.p_max) == (9.6, 9.6)


def test_cluster_points_links_within_distance():
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [5.0, 0.0]])
    labels = cluster_points(pts, 0.6)
    assert labels[0] == labels[1] == labels[2] != labels[3]


def test_fresh_tree_distances():
    tree = OccupancyTree(-20, -20, 20, 20, 0.3, 6)
    traj = Trajectory(np.array([[0.0, 0.0, 1.0], [10.0, 0.0, 1.0]]))
    d_obs, d_unknown = profile_distances(tree, POSE, traj)
    assert d_obs == math.inf
    assert d_unknown == 0.0
    assert profile_distances(tree, POSE, None)[1] == 0.0


def test_occupied_leaf_distance():
    tree = OccupancyTree(-20.1, -20.1, 20.1, 20.1, 0.3, 6)
    i, j, _ = tree.cells_of(np.array([5.0, 0.0]), 0)
    tree.write(0, i, j, OCCUPIED)
    centre = tree.cell_center(0, i, j)[0]
    expected = float(np.hypot(*centre)) - 0.15
    assert nearest_occupied(tree, POSE) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(4.85, abs=0.15)
    assert nearest_occupied(tree, POSE, search=2.0) == math.inf


def test_fully_free_trajectory_caps_at_length():
    tree = OccupancyTree(-1.2, -9.6, 38.4, 9.6, 0.3, 6)
    ii, jj = np.nonzero(np.ones(tree.shapes[0], dtype=bool))
    tree.write(0, ii, jj, FREE)
    traj = Trajectory(np.array([[0.0, 0.0, 1.0], [30.0, 0.0, 1.0]]))
    assert profile_distances(tree, POSE, traj)[1] == pytest.approx(30.0)
    assert profile_distances(tree, POSE, traj, clearance=0.6)[1] == pytest.approx(30.0)


def test_distance_to_unknown_never_exceeds_remaining_length():
    tree = OccupancyTree(-1.2, -9.6, 38.4, 9.6, 0.3, 6)
    ii, jj = np.nonzero(np.ones(tree.shapes[0], dtype=bool))
    tree.write(0, ii, jj, FREE)
    tree.write(0, np.array([60]), np.array([32]), OCCUPIED)
    traj = Trajectory(np.array([[0.0, 0.0, 1.0], [30.0, 0.0, 1.0]]))
    for s in (0.0, 10.0, 25.0):
        d = profile_distances(tree, POSE, traj, s_from=s)[1]
        assert d <= 30.0 - s + 1e-12
    assert profile_distances(tree, POSE, traj)[1] == pytest.approx(16.8, abs=0.3)


def test_volumes_of_empty_tree_and_open_scan():
    tree = OccupancyTree(-20, -20, 20, 20, 0.3, 6)
    cloud = sense(empty_world(WORLD), POSE, (1.0, 0.0), FULL)
    v_sensor, v_map = profile_volumes(tree, cloud)
    assert v_sensor == pytest.approx(math.pi * 20.0 ** 2 * FULL.band_height, rel=1e-9)
    assert v_map == 0.0


def test_volumes_after_integrate():
    tree = OccupancyTree(-20, -20, 20, 20, 0.3, 6)
    cloud = sense(empty_world(WORLD), POSE, (1.0, 0.0), FULL)
    res = integrate(tree, cloud, InsertionBudget(0.3, 500.0))
    k = tree.leaf_count(FREE) + tree.leaf_count(OCCUPIED)
    v_map = profile_volumes(tree, cloud)[1]
    assert v_map == pytest.approx(k * 0.3 ** 3, rel=1e-9)
    # cells the scan did not see free in full stay Unknown
    assert 0 < v_map <= res.voxels * 0.3 ** 3 + 1e-9


def test_ring_wall_truncates_sensor_volume():
    # a closed ring of pillars at half range
    r_p, R = 0.3, 10.0 + 0.3
    ang = np.arange(0.0, 2 * math.pi, 0.05 / R)
    gt = world_from_obstacles(WORLD, np.column_stack([R * np.cos(ang), R * np.sin(ang)]), r_p)
    cloud = sense(gt, POSE, (1.0, 0.0), FULL, frusta=((0.0, 90.0),))
    open_cloud = sense(empty_world(WORLD), POSE, (1.0, 0.0), FULL, frusta=((0.0, 90.0),))
    v_wall = profile_volumes(OccupancyTree(-20, -20, 20, 20, 0.3, 6), cloud)[0]
    v_open = profile_volumes(OccupancyTree(-20, -20, 20, 20, 0.3, 6), open_cloud)[0]
    # truncated sector integral: the swept band volume scales with range squared
    assert v_open == pytest.approx(0.5 * (math.pi / 2) * 20.0 ** 2 * FULL.band_height, rel=1e-9)
    assert v_wall == pytest.approx(0.5 * (math.pi / 2) * 10.0 ** 2 * FULL.band_height, rel=0.01)
    assert v_wall == pytest.approx(0.25 * v_open, rel=0.01)


def test_snapshot_validation():
    with pytest.raises(ValueError):
        ProfileSnapshot(5.0, 4.0, 1.0, 1.0, 1.0, 1.0, 0.0, np.zeros(3))
    with pytest.raises(ValueError):
        ProfileSnapshot(1.0, 4.0, -1.0, 1.0, 1.0, 1.0, 0.0, np.zeros(3))
