"""Closed-loop mission runner: sense, profile, govern, map, hand off, plan, fly."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import (BASELINE_VMAX_REF, ROBORUN_VMAX_REF, LatencyScaling, Physics, PlannerSettings)
from .governor import (KnobPolicy, LatencyModel, SolverSetup, local_budget, solve, static_policy,
                       time_budget)
from .mapping import InsertionBudget, OccupancyTree, downsample_cloud, integrate, sense
from .planning import NoPath, PlanBudget, Trajectory, handoff, plan, smooth, trapezoid_speeds
from .profilers import ProfileSnapshot, profile
from .vehicle import EnergyModel, VehicleState, d_stop, fly, mission_energy, swept_collisions
from .world import GroundTruth


class ModeKind(str, enum.Enum):
    BASELINE = "baseline"
    ROBORUN = "roborun"


class LatencySource(str, enum.Enum):
    MODELED = "modeled"
    MEASURED = "measured"


@dataclass(frozen=True)
class RuntimeMode:
    kind: ModeKind
    latency_source: LatencySource = LatencySource.MODELED
    static_policy: KnobPolicy | None = None
    v_max_ref: float | None = None      # overrides the mode's full-scale speed limit

    @classmethod
    def baseline(cls, latency_source: LatencySource = LatencySource.MODELED) -> "RuntimeMode":
        return cls(ModeKind.BASELINE, LatencySource(latency_source))

    @classmethod
    def roborun(cls, latency_source: LatencySource = LatencySource.MODELED) -> "RuntimeMode":
        return cls(ModeKind.ROBORUN, LatencySource(latency_source))

    @classmethod
    def parse(cls, name: str, latency: str = "modeled") -> "RuntimeMode":
        return cls(ModeKind(name.lower()), LatencySource(latency.lower()))

    def v_max(self, physics: Physics) -> float:
        if self.v_max_ref is not None:
            return physics.speed(self.v_max_ref)
        ref = BASELINE_VMAX_REF if self.kind is ModeKind.BASELINE else ROBORUN_VMAX_REF
        return physics.speed(ref)


@dataclass(frozen=True)
class MissionConfig:
    physics: Physics = Physics()
    scaling: LatencyScaling = LatencyScaling()
    planner: PlannerSettings = PlannerSettings()
    energy: EnergyModel = EnergyModel()
    time_cap_factor: float = 3.0     # sim-time cap = factor * goal distance / baseline v_max
    substep: float = 0.05


@dataclass
class DecisionRecord:
    index: int
    sim_time: float
    deadline: float
    stage_latency: tuple[float, float, float]
    point_cloud: float
    overhead: float
    policy: KnobPolicy
    snapshot: ProfileSnapshot
    replanned: bool
    zone: str
    processed: tuple[float, float, float] = (0.0, 0.0, 0.0)
    feasible: bool = True
    v_cmd: float = 0.0
    plan_failed: bool = False

    @property
    def latency(self) -> float:
        return sum(self.stage_latency) + self.point_cloud + self.overhead

    @property
    def compute(self) -> float:
        return sum(self.stage_latency)


RECORD_COLUMNS = (
    "index", "sim_time", "zone", "deadline", "latency", "delta0", "delta1", "delta2", "point_cloud", "overhead",
    "p0", "p1", "p2", "v0", "v1", "v2", "proc0", "proc1", "proc2", "predicted", "objective", "feasible",
    "degraded", "replanned", "plan_failed", "v_cmd",
) + tuple("snap_" + c for c in ProfileSnapshot.CSV_COLUMNS)

FOOTER_COLUMNS = ("flight_time_s", "distance_m", "avg_velocity", "energy_J", "collided", "timed_out",
                  "decisions", "replans")


@dataclass
class MissionLog:
    mode: str
    seed: int
    records: list[DecisionRecord] = field(default_factory=list)
    flight_time: float = 0.0
    distance: float = 0.0
    energy: float = 0.0
    collided: bool = False
    timed_out: bool = False
    reached_goal: bool = False
    path: list = field(default_factory=list, repr=False)

    @property
    def decisions(self) -> int:
        return len(self.records)

    @property
    def replans(self) -> int:
        return sum(r.replanned for r in self.records)

    @property
    def avg_velocity(self) -> float:
        return self.distance / self.flight_time if self.flight_time > 0 else 0.0

    @property
    def mean_compute(self) -> float:
        return float(np.mean([r.compute for r in self.records])) if self.records else 0.0

    @property
    def mean_latency(self) -> float:
        return float(np.mean([r.latency for r in self.records])) if self.records else 0.0

    def footer(self) -> list[str]:
        return [f"{self.flight_time:.6f}", f"{self.distance:.6f}", f"{self.avg_velocity:.6f}", f"{self.energy:.6f}",
                str(int(self.collided)), str(int(self.timed_out)), str(self.decisions), str(self.replans)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in self.records:
            pol, snap = r.policy, r.snapshot
            w.writerow([r.index, f"{r.sim_time:.6f}", r.zone, f"{r.deadline:.6f}", f"{r.latency:.6f}",
                        *(f"{x:.6f}" for x in r.stage_latency), f"{r.point_cloud:.6f}", f"{r.overhead:.6f}",
                        *(f"{x:.6f}" for x in pol.precisions), *(f"{x:.6f}" for x in pol.volumes),
                        *(f"{x:.6f}" for x in r.processed), f"{pol.predicted:.6f}", f"{pol.objective:.6e}",
                        int(r.feasible), int(pol.degraded), int(r.replanned), int(r.plan_failed),
                        f"{r.v_cmd:.6f}", *snap.csv_row()])
        w.writerow(("footer",) + FOOTER_COLUMNS)
        w.writerow(["footer", *self.footer()])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def safety_monitor(record: DecisionRecord, state: VehicleState | None = None) -> bool:
    """True when the accounted latency fits inside the decision's deadline (inclusive)."""
    return record.latency <= record.deadline


# ---------------------------------------------------------------------------


# A scan only steers the drone once the decision that consumes it and the next
# one have both run, so commanded speeds must leave room for two latencies.
RESPONSE_DECISIONS = 2


def speed_command(d: float, latency: float, v_max: float, scale: float, iters: int = 60) -> float:
    """Largest v <= v_max with local_budget(d, v) >= latency (0 when none)."""
    if local_budget(d, v_max, scale) >= latency:
        return v_max
    lo, hi = 0.0, v_max
    if local_budget(d, 1e-9 * scale, scale) < latency and d - d_stop(0.0, scale) <= 0:
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid > 0 and local_budget(d, mid, scale) >= latency:
            lo = mid
        else:
            hi = mid
    return lo


def _visibility(traj: Trajectory, s_from: float, d_unknown: float, max_range: float) -> np.ndarray:
    """Per-waypoint distance along the path to the first blocked position.

    Waypoints at or past the blocked position see nothing.
    """
    blocked = s_from + d_unknown
    lim = np.where(traj.arc < blocked, blocked - traj.arc, 0.0)
    return np.minimum(lim, max_range)


def _splice(old: Trajectory | None, s_now: float, s_start: float, new_pts: np.ndarray) -> np.ndarray:
    if old is None or s_start <= s_now + 1e-12:
        head = np.empty((0, 3)) if old is None else old.position_at(s_now)[None]
        pts = np.vstack([head, new_pts]) if len(head) else new_pts
    else:
        mid = old.waypoints[(old.arc > s_now + 1e-12) & (old.arc < s_start - 1e-12)]
        pts = np.vstack([old.position_at(s_now)[None], mid, new_pts])
    keep = np.concatenate([[True], np.hypot(*np.diff(pts[:, :2], axis=0).T) > 1e-12])
    return pts[keep]


class _Stopwatch:
    def __init__(self):
        self.t = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        out, self.t = now - self.t, now
        return out


def run_mission(gt: GroundTruth, mode: RuntimeMode, model: LatencyModel, seed: int,
                config: MissionConfig = MissionConfig(), record_path: bool = False) -> MissionLog:
    """Fly one mission from start to goal and log every decision."""
    ph = config.physics
    sc = config.scaling
    s = ph.scale
    roborun = mode.kind is ModeKind.ROBORUN
    measured = mode.latency_source is LatencySource.MEASURED
    v_max = mode.v_max(ph)
    setup = SolverSetup.for_scale(s, sc.compute_scale, levels=ph.levels)
    base_deadline = local_budget(ph.sensor_range, mode.v_max(ph), s)
    fixed = mode.static_policy or static_policy(s, base_deadline)

    tree = OccupancyTree.for_world(gt, ph)
    alt = ph.altitude
    goal = np.array([gt.goal.x, gt.goal.y, alt])
    start = np.array([gt.start.x, gt.start.y, alt])
    heading = goal - start
    heading = heading / (np.linalg.norm(heading) or 1.0)
    state = VehicleState(start, 0.0, heading, v_max, ph.a_max)
    goal_tol = gt.grid_size
    time_cap = config.time_cap_factor * float(np.hypot(*(goal - start)[:2])) / ph.speed(BASELINE_VMAX_REF)
    log = MissionLog(mode.kind.value, seed)
    if record_path:
        log.path.append(start.copy())

    # pre-flight scan while the drone waits on the pad, not charged to any decision
    integrate(tree, sense(gt, start, heading, ph), InsertionBudget(ph.vox_min, math.inf))

    traj: Trajectory | None = None
    t = 0.0
    last_latency = sc.point_cloud + (sc.reserve if roborun else 0.0)
    k = 0
    search = 2.0 * ph.sensor_range
    window = config.planner.window_factor * ph.sensor_range
    spacing = ph.length(config.planner.waypoint_spacing_ref)

    while True:
        pos = state.position
        if np.hypot(*(goal - pos)[:2]) <= goal_tol:
            log.reached_goal = True
            break
        if t >= time_cap:
            log.timed_out = True
            break

        clock = _Stopwatch()
        cloud = sense(gt, pos, state.heading, ph)
        snap = profile(tree, cloud, pos, state.heading, state.velocity, traj, state.progress,
                       sentinel=ph.p_max, search=search, precision=ph.vox_min, clearance=ph.body_radius)
        vis = _visibility(traj, state.progress, snap.d_unknown, ph.sensor_range) if traj is not None else None

        # governor
        feasible = True
        if roborun:
            if traj is not None and state.velocity > ph.hover_speed:
                # waypoints are flown no faster than their visibility allows at the current latency
                safe = np.array([speed_command(d, RESPONSE_DECISIONS * last_latency, v_max, s) for d in vis])
                speeds = np.minimum(traj.planned_velocity, safe)
                budget = time_budget(traj, state.velocity, snap.d_unknown, state.progress, s, vis, speeds)
            else:
                # a hovering drone stays put until the decision lands, so latency adds no risk
                budget = local_budget(ph.sensor_range, 0.0, s)
            target = budget - sc.reserve - sc.point_cloud
            if target <= 0:
                feasible = False
                target = 0.0
            if mode.static_policy is not None:
                # pinned knobs: the deadline still adapts but the solver is bypassed
                policy = replace(mode.static_policy, deadline=budget)
            else:
                policy = solve(snap, target, model, setup)
            deadline = budget
        else:
            policy = fixed
            deadline = base_deadline

        # replan trigger
        need_plan = traj is None or not feasible
        if not need_plan:
            remaining = traj.total_length - state.progress
            if remaining < d_stop(v_max, s) + RESPONSE_DECISIONS * v_max * last_latency:
                need_plan = True
            elif snap.d_unknown < remaining - 1e-9:
                # the body cannot follow the rest of the path in the current map
                need_plan = True

        # perception stage
        t_stage = [0.0, 0.0, 0.0]
        clock.lap()
        ref = traj.polyline_from(state.progress) if traj is not None else None
        cloud_p = downsample_cloud(cloud, policy.p0)
        res = integrate(tree, cloud_p, InsertionBudget(policy.p0, policy.v0), ref)
        t_stage[0] = clock.lap()
        processed = [res.volume, 0.0, 0.0]

        # charged latency of perception plus fixed overheads fixes where the plan starts
        overhead = sc.reserve if roborun else 0.0
        lat = setup.latency(model, policy.precisions, [res.volume, 0.0, 0.0])
        new_traj = None
        plan_failed = False
        if need_plan and feasible:
            pred_lat = (lat[0] + float(np.sum(setup.latency(model, policy.precisions,
                                                              [0.0, policy.v1, policy.v2])))
                        + sc.point_cloud + overhead)
            v_pre = speed_command(snap.d_unknown, RESPONSE_DECISIONS * pred_lat, v_max, s) if traj is not None else 0.0
            if traj is not None:
                ghost, _ = fly(state, traj, pred_lat, v_pre, config.substep)
                plan_from, s_plan, v_plan = ghost.position, ghost.progress, ghost.velocity
            else:
                plan_from, s_plan, v_plan = pos, 0.0, 0.0
            clock.lap()
            view = handoff(tree, policy.p1, policy.v1, plan_from)
            t_stage[1] = clock.lap()
            processed[1] = view.volume
            clearance = ph.body_radius
            try:
                raw = plan(view, plan_from, goal, PlanBudget(policy.p2, policy.v2),
                           rng_seed=int(np.random.SeedSequence([seed, k]).generate_state(1)[0]),
                           settings=config.planner, clearance=clearance, window_radius=window,
                           goal_tolerance=goal_tol)
                sm = smooth(raw, v_max, ph.a_max, view, clearance, v_plan, spacing)
                processed[2] = raw.explored_volume
                pts = _splice(traj, state.progress, s_plan, sm.waypoints)
                new_traj = Trajectory(pts, v_max=v_max, a_max=ph.a_max, precision=policy.p1,
                                      frontier=raw.frontier, reached_goal=raw.reached_goal)
                new_traj.planned_velocity = trapezoid_speeds(new_traj.arc, v_max, ph.a_max, state.velocity)
            except NoPath as exc:
                processed[2] = exc.explored_volume
                plan_failed = True
            t_stage[2] = clock.lap()
            lat = setup.latency(model, policy.precisions, processed)

        if measured:
            stage_lat = tuple(x * sc.compute_scale for x in t_stage)
        else:
            stage_lat = tuple(float(x) for x in lat)
        rec = DecisionRecord(k, t, deadline, stage_lat, sc.point_cloud, overhead, policy, snap,
                             need_plan and feasible, gt.zone(pos[0]), tuple(processed), feasible, 0.0, plan_failed)
        latency = rec.latency

        # fly while the decision computes, then commit the new plan
        v_cmd = speed_command(snap.d_unknown, RESPONSE_DECISIONS * latency, v_max, s) if feasible else 0.0
        if new_traj is not None and traj is not None:
            # stay behind the plan start, which assumed the predicted latency and speed
            v_cmd = min(v_cmd, v_pre)
        rec.v_cmd = v_cmd
        log.records.append(rec)
        prev = state
        state, swept = fly(state, traj, latency, v_cmd, config.substep)
        if traj is not None and len(traj) >= 2 and traj.total_length > 0:
            step_len = state.progress - prev.progress
            log.distance += step_len
            if record_path:
                log.path.append(state.position.copy())
            if swept_collisions(gt, swept, ph.body_radius).any():
                t += latency
                log.collided = True
                break
        t += latency
        last_latency = latency
        if new_traj is not None:
            traj, state = _rebase(new_traj, state, v_max, ph.a_max)
        elif traj is not None and state.progress >= traj.total_length - 1e-12 and need_plan:
            traj = None
            state = VehicleState(state.position, 0.0, state.heading, v_max, ph.a_max, 0.0)
        k += 1

    log.flight_time = t
    log.energy = mission_energy(t, config.energy)
    return log


def _rebase(traj: Trajectory, state: VehicleState, v_max: float,
            a_max: float) -> tuple[Trajectory, VehicleState]:
    """Re-anchor a freshly committed trajectory at the drone's current position."""
    # the drone lies on the spliced head of the trajectory; find its arc position
    seg_a, seg_b = traj.waypoints[:-1, :2], traj.waypoints[1:, :2]
    ab = seg_b - seg_a
    L2 = np.maximum(np.sum(ab * ab, axis=1), 1e-18)
    tt = np.clip(np.sum((state.position[:2] - seg_a) * ab, axis=1) / L2, 0.0, 1.0)
    proj = seg_a + ab * tt[:, None]
    j = int(np.argmin(np.hypot(*(proj - state.position[:2]).T)))
    s_here = traj.arc[j] + tt[j] * math.sqrt(L2[j])
    idx = traj.arc > s_here + 1e-12
    pts = np.vstack([state.position[None], traj.waypoints[idx]])
    out = Trajectory(pts, v_max=v_max, a_max=a_max, precision=traj.precision, frontier=traj.frontier,
                     reached_goal=traj.reached_goal)
    out.planned_velocity = trapezoid_speeds(out.arc, v_max, a_max, state.velocity)
    return out, VehicleState(state.position, state.velocity, state.heading, v_max, a_max, 0.0)
