import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roborun.bench import DEFAULT_SCALING
from roborun.config import LatencyScaling, Physics
from roborun.governor import KnobPolicy, local_budget
from roborun.profilers import ProfileSnapshot
from roborun.runtime import (RECORD_COLUMNS, DecisionRecord, MissionConfig, RuntimeMode, run_mission, safety_monitor,
                             speed_command)
from roborun.vehicle import d_stop
from roborun.world import EnvSpec, empty_world, generate_environment, suite_27

DESK = Physics(0.1)
SUITE_CFG = MissionConfig(physics=DESK, scaling=DEFAULT_SCALING)
MID = EnvSpec.reference(0.1, seed=3)


@pytest.fixture(scope="module")
def mid_logs(model):
    gt = generate_environment(MID)
    return {mode: run_mission(gt, RuntimeMode.parse(mode), model, 1, SUITE_CFG) for mode in ("baseline", "roborun")}


def record(latency, deadline):
    pol = KnobPolicy(0.03, 0.03, 0.03, 1.0, 1.0, 1.0, deadline)
    snap = ProfileSnapshot(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, np.zeros(3))
    return DecisionRecord(0, 0.0, deadline, (latency, 0.0, 0.0), 0.0, 0.0, pol, snap, False, "A")


def test_safety_monitor_boundary():
    assert safety_monitor(record(1.5, 1.5))
    assert not safety_monitor(record(1.5 + 1e-9, 1.5))


@given(st.floats(0.0, 5.0), st.floats(0.0, 20.0), st.floats(0.05, 1.0))
def test_speed_command_is_the_largest_safe_speed(d, latency, v_max):
    v = speed_command(d, latency, v_max, 0.1)
    assert 0.0 <= v <= v_max
    if v > 0:
        assert local_budget(d, v, 0.1) >= latency - 1e-9
    if v < v_max:
        # slightly faster would no longer leave room for the latency
        w = min(v + 1e-6, v_max)
        assert local_budget(d, w, 0.1) < latency + 1e-6 or d - d_stop(w, 0.1) <= 0


def test_empty_world_open_space_speed(model):
    # the un-inflated latency model: desk stage latencies plus the measured sensor overhead
    cfg = MissionConfig(physics=DESK, scaling=LatencyScaling(1.0, 1.0))
    log = run_mission(empty_world(EnvSpec.reference(0.1)), RuntimeMode.roborun(), model, 0, cfg)
    assert log.reached_goal and not log.collided
    v_max = RuntimeMode.roborun().v_max(DESK)
    assert log.avg_velocity >= 0.8 * v_max
    assert log.avg_velocity <= v_max


def test_mid_env_roborun_faster(mid_logs):
    base, rr = mid_logs["baseline"], mid_logs["roborun"]
    assert base.reached_goal and rr.reached_goal
    assert rr.flight_time < base.flight_time
    assert rr.energy / base.energy == pytest.approx(rr.flight_time / base.flight_time, rel=1e-12)


def test_deadline_safety_on_mid_env(mid_logs):
    rr = mid_logs["roborun"]
    for r in rr.records:
        if r.feasible and not r.policy.degraded:
            assert safety_monitor(r)


def test_baseline_uses_static_knobs(mid_logs):
    base = mid_logs["baseline"]
    pols = {r.policy for r in base.records}
    assert len(pols) == 1
    p = pols.pop()
    assert p.precisions == pytest.approx((0.03, 0.03, 0.03))
    assert p.volumes == pytest.approx((46.0, 150.0, 150.0))
    assert all(r.deadline == pytest.approx(local_budget(2.0, 0.05, 0.1)) for r in base.records)


def audit_margin(log):
    """Worst d_obs - (d_stop(v) - vox_min) over the decisions of a mission."""
    return min(r.snapshot.d_obs - (d_stop(r.snapshot.velocity, 0.1) - DESK.vox_min) for r in log.records)


def test_physical_safety_audit_baseline(mid_logs):
    assert audit_margin(mid_logs["baseline"]) >= 0.0


@pytest.mark.xfail(strict=True, reason="tangential passes at speed come closer than d_stop to mapped pillars; "
                                       "no collision results (see decisions ledger)")
def test_physical_safety_audit_roborun(mid_logs):
    assert audit_margin(mid_logs["roborun"]) >= 0.0


def test_infeasible_budget_hovers_and_keeps_running(model):
    # dense clutter: some deadlines fall below the fixed overheads
    gt = generate_environment(EnvSpec.reference(0.1, seed=3, density=0.6))
    log = run_mission(gt, RuntimeMode.roborun(), model, 0, SUITE_CFG)
    assert log.timed_out or log.reached_goal
    assert not log.collided
    bad = [r for r in log.records if not r.feasible]
    assert bad
    for r in bad:
        assert r.policy.volumes == (0.0, 0.0, 0.0)
        assert r.v_cmd == 0.0
        assert not r.replanned


def test_rerun_is_byte_identical(model):
    gt = generate_environment(suite_27(EnvSpec.reference(0.1), 0)[4])
    a = run_mission(gt, RuntimeMode.roborun(), model, 2, SUITE_CFG)
    b = run_mission(generate_environment(suite_27(EnvSpec.reference(0.1), 0)[4]), RuntimeMode.roborun(), model, 2,
                    SUITE_CFG)
    assert a.to_csv() == b.to_csv()


def test_log_layout(mid_logs, tmp_path):
    log = mid_logs["roborun"]
    path = tmp_path / "log.csv"
    log.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(RECORD_COLUMNS)
    assert len(lines) == 1 + log.decisions + 2
    assert lines[-2].startswith("footer,flight_time_s")


def test_mode_parsing_and_speed_override():
    assert RuntimeMode.parse("RoboRun").kind.value == "roborun"
    assert RuntimeMode.baseline().v_max(DESK) == pytest.approx(0.05)
    assert RuntimeMode.roborun().v_max(DESK) == pytest.approx(0.6)
    pinned = RuntimeMode(RuntimeMode.roborun().kind, v_max_ref=0.5)
    assert pinned.v_max(DESK) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        RuntimeMode.parse("fast")
