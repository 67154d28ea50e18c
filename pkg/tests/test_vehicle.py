import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roborun.planning import Trajectory
from roborun.vehicle import (EnergyModel, VehicleState, check_collision, d_stop, fly, mission_energy, step,
                             swept_collisions)
from roborun.world import EnvSpec, empty_world, world_from_obstacles


@pytest.mark.parametrize("v, expected", [(0.0, 0.20), (2.0, 1.14), (6.0, 4.34)])
def test_d_stop_examples(v, expected):
    assert d_stop(v) == pytest.approx(expected, abs=1e-12)


def test_d_stop_similarity():
    for v in (0.0, 0.7, 3.0, 6.0):
        assert d_stop(0.1 * v, 0.1) == pytest.approx(0.1 * d_stop(v), rel=1e-12)


@given(st.floats(0.0, 50.0), st.floats(1e-3, 10.0))
def test_d_stop_increasing_and_convex(v, h):
    assert d_stop(v + h) > d_stop(v)
    assert d_stop(v + h) - 2 * d_stop(v + 0.5 * h) + d_stop(v) >= -1e-9


def test_d_stop_rejects_negative():
    with pytest.raises(ValueError):
        d_stop(-1.0)


def line(length, v_max=10.0, a_max=2.0):
    return Trajectory(np.array([[0.0, 0.0, 1.0], [length, 0.0, 1.0]]), v_max=v_max, a_max=a_max)


def test_step_zero_length_trajectory_keeps_state():
    s0 = VehicleState(np.array([1.0, 2.0, 1.0]), 0.0, np.array([1.0, 0.0, 0.0]), 5.0, 2.0)
    traj = Trajectory(np.array([[1.0, 2.0, 1.0]]))
    s1 = step(s0, traj, 1.0)
    assert np.array_equal(s1.position, s0.position)
    assert s1.velocity == 0.0


def test_step_constant_acceleration_from_rest():
    s0 = VehicleState(np.array([0.0, 0.0, 1.0]), 0.0, np.array([1.0, 0.0, 0.0]), 10.0, 2.0)
    s1 = step(s0, line(100.0), 1.0)
    assert s1.velocity == pytest.approx(2.0, abs=1e-9)
    assert s1.position[0] == pytest.approx(1.0, abs=1e-9)


def test_arrival_stops_at_goal():
    s0 = VehicleState(np.array([0.0, 0.0, 1.0]), 0.0, np.array([1.0, 0.0, 0.0]), 3.0, 2.0)
    s1 = step(s0, line(10.0), 30.0)
    assert s1.velocity == 0.0
    assert np.allclose(s1.position, [10.0, 0.0, 1.0])


def test_fly_respects_speed_cap():
    s0 = VehicleState(np.array([0.0, 0.0, 1.0]), 0.0, np.array([1.0, 0.0, 0.0]), 10.0, 2.0)
    s1, pts = fly(s0, line(100.0), 5.0, v_cap=1.5)
    assert s1.velocity <= 1.5 + 1e-12
    assert np.all(np.diff(pts[:, 0]) <= 1.5 * 0.05 + 1e-9)


@given(st.floats(0.5, 5.0), st.floats(0.5, 4.0), st.floats(0.1, 3.0))
def test_fly_never_exceeds_limits(v_max, a_max, dt):
    s0 = VehicleState(np.array([0.0, 0.0, 1.0]), 0.0, np.array([1.0, 0.0, 0.0]), v_max, a_max)
    s1, pts = fly(s0, line(20.0, v_max, a_max), dt)
    assert s1.velocity <= v_max + 1e-12
    assert s1.velocity <= a_max * dt + 1e-9
    assert s1.progress <= 20.0 + 1e-12


WORLD = EnvSpec.reference(1.0)


def test_collision_through_pillar_centre():
    gt = world_from_obstacles(WORLD, [(50.0, 0.0)], 2.0)
    assert check_collision(gt, ((40.0, 0.0, 1.0), (60.0, 0.0, 1.0)), 0.6)


def test_collision_empty_world():
    assert not check_collision(empty_world(WORLD), ((0.0, 0.0, 1.0), (60.0, 0.0, 1.0)), 0.6)


def test_tangent_pass_is_not_a_collision():
    gt = world_from_obstacles(WORLD, [(50.0, 0.0)], 2.0)
    y = 2.0 + 0.6
    assert not check_collision(gt, ((40.0, y, 1.0), (60.0, y, 1.0)), 0.6)
    assert check_collision(gt, ((40.0, y - 1e-6, 1.0), (60.0, y - 1e-6, 1.0)), 0.6)


def test_swept_collisions_per_segment():
    gt = world_from_obstacles(WORLD, [(50.0, 0.0)], 2.0)
    pts = np.array([[0.0, 0.0], [40.0, 0.0], [60.0, 0.0], [60.0, 20.0]])
    assert swept_collisions(gt, pts, 0.6).tolist() == [False, True, False]


def test_mission_energy_examples():
    assert mission_energy(0.0) == 0.0
    assert mission_energy(2093.0) == pytest.approx(1000e3, rel=0.01)
    # constant power gives 222 kJ for a 465 s flight
    assert mission_energy(465.0) == pytest.approx(222.27e3, rel=1e-3)
    assert mission_energy(10.0, EnergyModel(100.0)) == 1000.0
    with pytest.raises(ValueError):
        mission_energy(-1.0)
