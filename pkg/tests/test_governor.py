import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roborun.config import precision_ladder
from roborun.governor import (CalibrationError, KnobPolicy, LatencyModel, SolverSetup, VolumeCaps, admissible_pairs,
                              calibrate, local_budget, solve, stage_latency, time_budget, time_budget_from_locals,
                              volume_bounds, water_fill)
from roborun.planning import Trajectory
from roborun.profilers import ProfileSnapshot
from roborun.vehicle import d_stop


# deadlines -------------------------------------------------------------------


def test_local_budget_boundary():
    for v in (0.5, 2.0, 6.0):
        assert local_budget(d_stop(v), v) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("d, v, expected", [(10.0, 2.0, 4.43), (20.0, 4.0, 4.37)])
def test_local_budget_examples(d, v, expected):
    assert local_budget(d, v) == pytest.approx(expected, abs=1e-12)
    assert local_budget(d, v) == pytest.approx((d - d_stop(v)) / v, rel=1e-12)


def test_local_budget_scale_invariant():
    assert local_budget(1.0, 0.2, 0.1) == pytest.approx(local_budget(10.0, 2.0), rel=1e-12)


def test_local_budget_hover_and_floor():
    assert local_budget(20.0, 0.0) == pytest.approx((20.0 - d_stop(0.1)) / 0.1)
    assert local_budget(1.0, 6.0) == 0.0
    with pytest.raises(ValueError):
        local_budget(-1.0, 1.0)


def test_time_budget_empty():
    assert time_budget_from_locals([], []) == 0.0
    assert time_budget(None, 1.0, 10.0) == 0.0


def test_time_budget_hand_traces():
    assert time_budget_from_locals([5.0, 4.0, 10.0], [1.0, 1.0]) == 2.0
    assert time_budget_from_locals([5.0, 0.5, 10.0], [1.0, 1.0]) == 1.0


def running_min_oracle(locals_, flights):
    """Literal transcription of the running-minimum loop, used as an oracle."""
    b_g, b_r = 0.0, locals_[0]
    for i in range(1, len(locals_)):
        b_r = min(b_r - flights[i - 1], locals_[i])
        if b_r <= 0:
            break
        b_g += flights[i - 1]
    return b_g


@given(st.lists(st.tuples(st.floats(0.0, 20.0), st.floats(0.0, 5.0)), min_size=0, max_size=15),
       st.floats(0.0, 20.0))
def test_time_budget_properties(pairs, b0):
    locals_ = [b0] + [b for b, _ in pairs]
    flights = [f for _, f in pairs]
    b_g = time_budget_from_locals(locals_, flights)
    assert b_g == running_min_oracle(locals_, flights)
    assert 0.0 <= b_g <= sum(flights) + 1e-12
    # admitted waypoints: those whose flight time was added
    acc, admitted = 0.0, 0
    for f in flights:
        if acc + f <= b_g + 1e-12 and admitted < len(flights):
            acc += f
            admitted += 1
        else:
            break
    for i in range(admitted + 1):
        assert b_g <= locals_[i] + sum(flights[:i]) + 1e-9


def test_time_budget_on_trajectory_uses_planned_speeds():
    traj = Trajectory(np.array([[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [4.0, 0.0, 1.0]]),
                      planned_velocity=np.array([2.0, 2.0, 2.0]),
                      planned_visibility=np.array([20.0, 20.0, 20.0]))
    locals_ = [local_budget(20.0, 2.0)] * 3
    assert time_budget(traj, 2.0, 20.0) == pytest.approx(time_budget_from_locals(locals_, [1.0, 1.0]))


# latency model -----------------------------------------------------------------


def test_stage_latency_examples():
    lin = LatencyModel(np.tile([0.0, 0.0, 1.0, 1.0], (3, 1)))
    assert stage_latency(lin, 0, 0.5, 3.0) == pytest.approx(6.0)
    cube = LatencyModel(np.tile([1.0, 0.0, 0.0, 1.0], (3, 1)))
    assert stage_latency(cube, 1, 0.5, 2.0) == pytest.approx(16.0)
    rnd = LatencyModel(np.abs(np.random.default_rng(0).normal(size=(3, 4))))
    for p in (0.3, 1.2, 9.6):
        assert stage_latency(rnd, 2, p, 0.0) == 0.0
    with pytest.raises(ValueError):
        stage_latency(lin, 0, 0.0, 1.0)


@given(st.floats(0.05, 10.0), st.floats(1.01, 4.0), st.floats(0.0, 1e6))
def test_stage_latency_decreases_with_precision_size(p, k, v):
    model = LatencyModel(np.tile([0.3, 0.2, 0.1, 2.0], (3, 1)))
    assert stage_latency(model, 0, p * k, v) <= stage_latency(model, 0, p, v)


def test_model_save_load_round_trip(tmp_path, model):
    model.save(tmp_path / "m.txt")
    back = LatencyModel.load(tmp_path / "m.txt")
    assert np.allclose(back.q, model.q, rtol=1e-9)
    assert back.fit_mse == pytest.approx(model.fit_mse, rel=1e-9)


GRID = [(p, v) for p in precision_ladder(0.3, 6) for v in (1e3, 1e4, 1e5, 1e6)]


def test_calibrate_recovers_synthetic_coefficients():
    def exact(p, v):
        ph = 1.0 / p
        return (2 * ph ** 2 + ph) * 0.5 * v

    model = calibrate([exact] * 3, GRID, reps=5, enforce=True)
    for st_ in range(3):
        assert np.allclose(model.effective()[st_], [0.0, 1.0, 0.5], atol=1e-6, rtol=0)
    assert model.fit_mse < 1e-12


def test_calibrate_with_noise_stays_under_threshold():
    rng = np.random.default_rng(0)
    mses = []
    for trial in range(20):
        def noisy(p, v):
            ph = 1.0 / p
            return (0.4 * ph ** 3 + 2 * ph ** 2 + ph) * 0.5 * v * (1 + 0.05 * rng.standard_normal())

        mses.append(calibrate([noisy] * 3, GRID, reps=5, enforce=False).fit_mse)
    assert max(mses) < 0.08


def test_calibrate_raises_on_bad_fit(tmp_path):
    def erratic(p, v):
        return float(np.sin(7 * p + v)) + 1.5

    with pytest.raises(CalibrationError):
        calibrate([erratic] * 3, GRID, reps=5, model_path=tmp_path / "m.txt")
    assert not (tmp_path / "m.txt").exists()


def test_calibrate_writes_raw_csv(tmp_path):
    calibrate([lambda p, v: v / p] * 3, GRID, reps=5, csv_path=tmp_path / "raw.csv")
    lines = (tmp_path / "raw.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * len(GRID) * 5


# solver --------------------------------------------------------------------------


SETUP = SolverSetup.for_scale(1.0)
LADDER = SETUP.ladder


def snapshot(g_min=9.6, g_avg=9.6, d_obs=9.6, v_sensor=1e6, v_map=1e6):
    return ProfileSnapshot(g_min, g_avg, d_obs, 10.0, v_sensor, v_map, 1.0, np.zeros(3))


def predicted(model, setup, pol):
    return float(setup.unit_costs(model, pol.p0, pol.p1) @ np.array(pol.volumes))


def check_constraints(snap, pol: KnobPolicy, setup: SolverSetup, model, tol=1e-9):
    """Independent restatement of every constraint row; returns a list of violations."""
    bad = []
    if not pol.degraded:
        if not (snap.g_min - tol <= pol.p0 <= min(pol.p1, snap.g_avg, snap.d_obs) + tol):
            bad.append("precision order")
    if not math.isclose(pol.p1, pol.p2):
        bad.append("p1 != p2")
    for p in pol.precisions:
        if not any(math.isclose(p, q) for q in setup.ladder):
            bad.append("precision off ladder")
    u1 = min(snap.v_sensor, snap.v_map, setup.caps.v1)
    if not (0 <= pol.v0 <= min(setup.caps.v0, pol.v1) + tol * max(1, pol.v1)):
        bad.append("v0 bound")
    if not (0 <= pol.v1 <= u1 * (1 + tol) + tol):
        bad.append("v1 bound")
    if not (0 <= pol.v2 <= min(setup.caps.v2, u1) * (1 + tol) + tol):
        bad.append("v2 bound")
    if predicted(model, setup, pol) > pol.deadline * (1 + 1e-9) + 1e-12:
        bad.append("deadline")
    return bad


def test_solve_zero_deadline(model):
    pol = solve(snapshot(), 0.0, model, SETUP)
    assert pol.volumes == (0.0, 0.0, 0.0)
    assert pol.objective == 0.0


def test_solve_pinned_precision(model):
    pol = solve(snapshot(0.3, 0.3, 0.3), 5.0, model, SETUP)
    assert pol.precisions == (0.3, 0.3, 0.3)
    assert not pol.degraded


def test_solve_open_space_huge_deadline(model):
    # the sentinel gap pins p0 to the coarsest level, and p1 >= p0
    pol = solve(snapshot(), 1e9, model, SETUP)
    assert pol.p0 == pol.p1 == pol.p2 == 9.6
    u = volume_bounds(snapshot(), SETUP.caps)
    assert pol.volumes == pytest.approx((u[0], u[1], u[2]))
    assert pol.objective == pytest.approx((1e9 - pol.predicted) ** 2)


def test_solve_degraded_when_no_pair_fits(model):
    snap = snapshot(g_min=5.0, g_avg=5.0, d_obs=0.1)
    pol = solve(snap, 2.0, model, SETUP)
    assert pol.degraded
    assert pol.p0 == pol.p1 == 0.3
    assert predicted(model, SETUP, pol) <= 2.0 + 1e-12


def brute_force(snap, deadline, model, setup, n_vol=8):
    """Best objective over admissible ladder pairs and an n_vol-level grid per volume."""
    u0, u1, u2 = volume_bounds(snap, setup.caps)
    best = math.inf
    for p0, p1 in admissible_pairs(snap, setup.ladder) or []:
        c = setup.unit_costs(model, p0, p1)
        lv1 = np.linspace(0.0, u1, n_vol)
        for v1 in lv1:
            for v0 in np.linspace(0.0, min(u0, v1), n_vol):
                for v2 in np.linspace(0.0, u2, n_vol):
                    lat = c[0] * v0 + c[1] * v1 + c[2] * v2
                    if lat <= deadline:
                        best = min(best, (deadline - lat) ** 2)
    return best


def random_snapshot(rng):
    ladder = np.array(LADDER)
    g_min = float(rng.uniform(0.2, 12.0))
    g_avg = float(g_min + rng.exponential(2.0))
    return ProfileSnapshot(g_min, g_avg, float(rng.uniform(0.1, 12.0)), float(rng.uniform(0, 20)),
                           float(10 ** rng.uniform(2, 6.5)), float(10 ** rng.uniform(2, 6.5)),
                           float(rng.uniform(0, 6)), np.zeros(3))


def test_solver_matches_small_brute_force_grid(model):
    rng = np.random.default_rng(7)
    for _ in range(25):
        snap = random_snapshot(rng)
        deadline = float(rng.uniform(0.0, 20.0))
        setup = SolverSetup.for_scale(1.0, compute_scale=float(10 ** rng.uniform(0, 3)))
        pol = solve(snap, deadline, model, setup)
        assert check_constraints(snap, pol, setup, model) == []
        if not pol.degraded:
            assert pol.objective <= brute_force(snap, deadline, model, setup, n_vol=5) + 1e-9


@settings(max_examples=1000)
@given(st.integers(0, 2 ** 32 - 1))
def test_solver_constraints_hold_on_random_snapshots(seed):
    rng = np.random.default_rng(seed)
    model = LatencyModel(np.column_stack([rng.uniform(0, 1, (3, 3)) * [[1e-4, 1e-3, 1e-2]], np.ones(3)]))
    snap = random_snapshot(rng)
    setup = SolverSetup.for_scale(float(rng.choice([1.0, 0.1])), compute_scale=float(10 ** rng.uniform(0, 3)))
    deadline = float(rng.uniform(0.0, 30.0))
    pol = solve(snap, deadline, model, setup)
    assert check_constraints(snap, pol, setup, model) == []
    assert pol.predicted <= deadline + 1e-12


@given(st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=3),
       st.lists(st.floats(0.0, 1e6), min_size=3, max_size=3), st.floats(0.0, 100.0))
def test_water_fill_never_exceeds_target(costs, bounds, target):
    v = water_fill(np.array(costs), bounds, target)
    assert float(np.dot(costs, v)) <= target * (1 + 1e-12) + 1e-12
    assert v[0] <= min(bounds[0], v[1]) + 1e-9
    assert v[1] <= bounds[1] + 1e-9 and v[2] <= bounds[2] + 1e-9
    full = np.array([min(bounds[0], bounds[1]), bounds[1], bounds[2]])
    if float(np.dot(costs, full)) > target:
        # the fill is tight: nothing left on the table
        assert float(np.dot(costs, v)) == pytest.approx(target, rel=1e-9, abs=1e-12)


def test_volume_bounds_respect_sensor_and_map():
    caps = VolumeCaps(60.0, 1000.0, 1000.0)
    snap = snapshot(v_sensor=400.0, v_map=50.0)
    assert volume_bounds(snap, caps) == (50.0, 50.0, 50.0)
    snap = snapshot(v_sensor=400.0, v_map=5000.0)
    assert volume_bounds(snap, caps) == (60.0, 400.0, 400.0)


def test_admissible_pairs_order():
    snap = snapshot(g_min=0.5, g_avg=2.0, d_obs=5.0)
    pairs = admissible_pairs(snap, LADDER)
    assert pairs
    for p0, p1 in pairs:
        assert 0.5 <= p0 <= 2.0 and p0 <= p1
    assert {p0 for p0, _ in pairs} == {0.6, 1.2}
