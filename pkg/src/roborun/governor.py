"""Decision deadlines, stage latency models and the knob solver.

Latency models are expressed in full-scale units (precision in meters,
volume in cubic meters at scale 1).  The solver works in the desk units of
the mission and converts before evaluating the model.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import nnls

from .config import HOVER_SPEED_REF, precision_ladder
from .planning import Trajectory
from .vehicle import d_stop

STAGES = (0, 1, 2)
STAGE_NAMES = ("perception", "handoff", "planning")


# ---------------------------------------------------------------------------
# deadlines


def local_budget(d: float, v: float, scale: float = 1.0) -> float:
    """Time the drone may spend before reacting: (d - d_stop(v)) / v, floored at 0.

    At v = 0 the hover speed (0.1 m/s full scale) stands in for v.
    """
    if d < 0:
        raise ValueError("visibility must be non-negative")
    if v <= 0:
        v = HOVER_SPEED_REF * scale
    return max((d - d_stop(v, scale)) / v, 0.0)


def time_budget_from_locals(local_budgets: Sequence[float], flight_times: Sequence[float]) -> float:
    """Running-minimum budget over waypoints.

    ``local_budgets[0]`` belongs to the current state W0 and
    ``flight_times[i - 1]`` is the flight time from W(i-1) to W(i).
    """
    if len(local_budgets) == 0:
        return 0.0
    if len(flight_times) != len(local_budgets) - 1:
        raise ValueError("need one flight time per segment")
    b_g = 0.0
    b_r = float(local_budgets[0])
    for i in range(1, len(local_budgets)):
        ft = float(flight_times[i - 1])
        b_r = b_r - ft
        b_r = min(b_r, float(local_budgets[i]))
        if b_r <= 0:
            break
        b_g = b_g + ft
    return b_g


def waypoint_budgets(traj: Trajectory, s_from: float, velocity: float, visibility_now: float,
                     scale: float = 1.0, visibility: np.ndarray | None = None,
                     speeds: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Local budgets and segment flight times for the waypoints ahead of ``s_from``."""
    idx = traj.ahead(s_from)
    vis = traj.planned_visibility if visibility is None else visibility
    planned = traj.planned_velocity if speeds is None else speeds
    locals_ = [local_budget(visibility_now, velocity, scale)]
    flights = []
    prev_s, prev_v = s_from, velocity
    floor = HOVER_SPEED_REF * scale
    for k in idx:
        v_k = float(planned[k])
        seg = float(traj.arc[k] - prev_s)
        flights.append(seg / max(0.5 * (prev_v + v_k), floor))
        locals_.append(local_budget(float(vis[k]), v_k, scale))
        prev_s, prev_v = float(traj.arc[k]), v_k
    return np.asarray(locals_), np.asarray(flights)


def time_budget(traj: Trajectory | None, velocity: float, visibility_now: float, s_from: float = 0.0,
                scale: float = 1.0, visibility: np.ndarray | None = None,
                speeds: np.ndarray | None = None) -> float:
    """Deadline for the next decision given the trajectory ahead of the drone.

    ``visibility`` and ``speeds`` override the per-waypoint values stored on
    the trajectory.
    """
    if traj is None or len(traj) == 0:
        return 0.0
    locals_, flights = waypoint_budgets(traj, s_from, velocity, visibility_now, scale, visibility, speeds)
    return time_budget_from_locals(locals_, flights)


# ---------------------------------------------------------------------------
# latency model


def _features(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    ph = 1.0 / np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.column_stack([ph ** 3 * v, ph ** 2 * v, ph * v])


@dataclass
class LatencyModel:
    """Per-stage coefficients (q0, q1, q2, q3) of (q0 p^-3 + q1 p^-2 + q2 p^-1) * q3 * v."""

    q: np.ndarray
    fit_mse: float = 0.0
    stage_mse: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(3, 4)

    def predict(self, stage: int, p, v):
        q = self.q[stage]
        ph = 1.0 / np.asarray(p, dtype=float)
        return (q[0] * ph ** 3 + q[1] * ph ** 2 + q[2] * ph) * (q[3] * np.asarray(v, dtype=float))

    def unit_cost(self, stage: int, p: float) -> float:
        """Latency per unit volume at precision ``p``."""
        q = self.q[stage]
        ph = 1.0 / p
        return float((q[0] * ph ** 3 + q[1] * ph ** 2 + q[2] * ph) * q[3])

    def effective(self) -> np.ndarray:
        """Identifiable products q_j * q3 (the scale of q3 is a free gauge)."""
        return self.q[:, :3] * self.q[:, 3:4]

    def save(self, path: str | Path) -> None:
        lines = [" ".join(f"{c:.10e}" for c in row) for row in self.q]
        lines.append(f"mse {self.fit_mse:.10e}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LatencyModel":
        rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
        q = np.array([[float(x) for x in r] for r in rows[:3]])
        mse = float(rows[3][1]) if len(rows) > 3 else 0.0
        return cls(q, mse)


def stage_latency(model: LatencyModel, i: int, p: float, v: float) -> float:
    """Modeled latency of stage ``i`` at precision ``p`` and volume ``v``."""
    if p <= 0 or v < 0:
        raise ValueError("need p > 0 and v >= 0")
    return float(model.predict(i, p, v))


class CalibrationError(RuntimeError):
    pass


@dataclass
class CalibrationData:
    rows: list = field(default_factory=list)   # (stage, p, v_requested, rep, latency_s, v_processed)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "p", "v", "rep", "latency_s", "v_processed"])
            for st, p, v, rep, lat, vp in self.rows:
                w.writerow([st, f"{p:.6f}", f"{v:.6f}", rep, f"{lat:.9f}", f"{vp:.6f}"])


def fit_stage(p: np.ndarray, v: np.ndarray, latency: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    """Non-negative least-squares fit of one stage; returns (q, normalized mse, residuals)."""
    A = _features(p, v)
    scale = np.maximum(np.abs(A).max(axis=0), 1e-300)
    coef, _ = nnls(A / scale, np.asarray(latency, dtype=float))
    coef = coef / scale
    pred = A @ coef
    denom = float(np.mean(np.asarray(latency) ** 2))
    mse = float(np.mean((pred - latency) ** 2) / denom) if denom > 0 else 0.0
    return np.array([coef[0], coef[1], coef[2], 1.0]), mse, pred - latency


def calibrate(stage_executors: Sequence[Callable[[float, float], float | tuple[float, float]]],
              knob_grid: Iterable[tuple[float, float]] | Sequence[Iterable[tuple[float, float]]],
              reps: int = 5, threshold: float = 0.08, model_path: str | Path | None = None,
              csv_path: str | Path | None = None, timer: Callable[[], float] = time.perf_counter,
              enforce: bool = True) -> LatencyModel:
    """Fit the per-stage latency model from measured medians.

    Each executor is called as ``f(p, v)``.  It either returns the latency
    in seconds, or returns ``None`` and is timed here, or returns a pair
    (latency, processed volume) in which case the fit regresses on the
    volume actually processed.  ``knob_grid`` is one list of (p, v) cells
    shared by all stages or one list per stage.
    """
    grids = list(knob_grid)
    if grids and isinstance(grids[0], tuple) and not isinstance(grids[0][0], (list, tuple)):
        grids = [grids] * len(stage_executors)
    data = CalibrationData()
    q = np.zeros((3, 4))
    mses = []
    worst = []
    for st, (run, cells) in enumerate(zip(stage_executors, grids)):
        P, V, L = [], [], []
        for p, v in cells:
            lats, vols = [], []
            for rep in range(reps):
                t0 = timer()
                out = run(p, v)
                elapsed = timer() - t0
                if out is None:
                    lat, vol = elapsed, v
                elif isinstance(out, tuple):
                    lat, vol = out
                else:
                    lat, vol = float(out), v
                lats.append(lat)
                vols.append(vol)
                data.rows.append((st, p, v, rep, lat, vol))
            P.append(p)
            V.append(float(np.median(vols)))
            L.append(float(np.median(lats)))
        q[st], mse, resid = fit_stage(np.array(P), np.array(V), np.array(L))
        mses.append(mse)
        k = int(np.argmax(np.abs(resid)))
        worst.append((st, P[k], V[k], L[k], L[k] + resid[k]))
    model = LatencyModel(q, float(np.mean(mses)), tuple(mses))
    if csv_path is not None:
        data.write_csv(csv_path)
    if enforce and model.fit_mse >= threshold:
        detail = "; ".join(f"stage {s}: p={p:g} v={v:g} measured={m:.3g}s fitted={f:.3g}s"
                           for s, p, v, m, f in worst)
        raise CalibrationError(f"fit mse {model.fit_mse:.3f} >= {threshold} (worst cells: {detail})")
    if model_path is not None:
        model.save(model_path)
    return model


# ---------------------------------------------------------------------------
# knob solver


@dataclass(frozen=True)
class KnobPolicy:
    p0: float
    p1: float
    p2: float
    v0: float
    v1: float
    v2: float
    deadline: float
    predicted: float = 0.0
    objective: float = 0.0
    degraded: bool = False

    @property
    def volumes(self) -> tuple[float, float, float]:
        return self.v0, self.v1, self.v2

    @property
    def precisions(self) -> tuple[float, float, float]:
        return self.p0, self.p1, self.p2


@dataclass(frozen=True)
class VolumeCaps:
    """Upper bounds in desk cubic meters: v0 cap, v1 cap and v2 cap."""

    v0: float
    v1: float
    v2: float


@dataclass(frozen=True)
class SolverSetup:
    """What the solver needs besides the snapshot."""

    ladder: tuple[float, ...]
    caps: VolumeCaps
    scale: float = 1.0
    compute_scale: float = 1.0

    @classmethod
    def for_scale(cls, scale: float, compute_scale: float = 1.0, vox_min_ref: float = 0.3, levels: int = 6,
                  v0_ref: float = 60_000.0, v1_ref: float = 1e6, v2_ref: float = 1e6) -> "SolverSetup":
        s3 = scale ** 3
        return cls(precision_ladder(vox_min_ref * scale, levels), VolumeCaps(v0_ref * s3, v1_ref * s3, v2_ref * s3),
                   scale, compute_scale)

    def unit_costs(self, model: LatencyModel, p0: float, p1: float) -> np.ndarray:
        """Charged seconds per desk cubic meter for each stage."""
        s = self.scale
        conv = self.compute_scale / s ** 3
        return np.array([model.unit_cost(0, p0 / s), model.unit_cost(1, p1 / s), model.unit_cost(2, p1 / s)]) * conv

    def latency(self, model: LatencyModel, p: Sequence[float], v: Sequence[float]) -> np.ndarray:
        s = self.scale
        return np.array([model.predict(i, p[i] / s, v[i] / s ** 3) for i in STAGES]) * self.compute_scale


def volume_bounds(snapshot, caps: VolumeCaps) -> tuple[float, float, float]:
    u1 = max(min(snapshot.v_sensor, snapshot.v_map, caps.v1), 0.0)
    u0 = max(min(caps.v0, u1), 0.0)
    # the planner can only explore known space it was handed
    return u0, u1, max(min(caps.v2, u1), 0.0)


def water_fill(costs: np.ndarray, bounds: Sequence[float], target: float) -> np.ndarray:
    """Volumes with total latency as close to ``target`` as possible without exceeding it.

    Stages share a common latency level w: v1 = min(U1, w/c1),
    v0 = min(U0, w/c0, v1), v2 = min(U2, w/c2).  The total is continuous
    and non-decreasing in w, so the exact fill is found by bisection.
    """
    u0, u1, u2 = bounds
    c = np.asarray(costs, dtype=float)

    def vols(w: float) -> np.ndarray:
        def lim(u, ci):
            return u if ci <= 0 else min(u, w / ci)
        v1 = lim(u1, c[1])
        v0 = min(lim(u0, c[0]), v1)
        v2 = lim(u2, c[2])
        return np.array([v0, v1, v2])

    if target <= 0:
        return np.zeros(3)
    full = np.array([min(u0, u1), u1, u2])
    if float(c @ full) <= target:
        return full
    lo, hi = 0.0, target
    while float(c @ vols(hi)) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(c @ vols(mid)) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1e-300):
            break
    return vols(lo)


def admissible_pairs(snapshot, ladder: Sequence[float], tol: float = 1e-9) -> list[tuple[float, float]]:
    """(p0, p1) pairs with g_min <= p0 <= min(p1, g_avg, d_obs)."""
    out = []
    for p0 in ladder:
        if p0 < snapshot.g_min - tol or p0 > min(snapshot.g_avg, snapshot.d_obs) + tol:
            continue
        for p1 in ladder:
            if p0 <= p1 + tol:
                out.append((p0, p1))
    return out


def solve(snapshot, deadline: float, model: LatencyModel, setup: SolverSetup) -> KnobPolicy:
    """Pick precisions and volumes whose predicted latency best fills ``deadline``.

    Predicted latency never exceeds the deadline.  Among equal objectives the
    smaller p0, then smaller p1, then larger total volume wins.  When no
    precision pair satisfies the gap and distance constraints the policy is
    flagged degraded and uses the largest precision not above
    min(g_avg, d_obs) (vox_min if none) for both stages.
    """
    if deadline < 0:
        raise ValueError("deadline must be non-negative")
    bounds = volume_bounds(snapshot, setup.caps)
    pairs = admissible_pairs(snapshot, setup.ladder)
    degraded = not pairs
    if degraded:
        limit = min(snapshot.g_avg, snapshot.d_obs)
        fits = [p for p in setup.ladder if p <= limit + 1e-9]
        p = fits[-1] if fits else setup.ladder[0]
        pairs = [(p, p)]
    best = None
    for p0, p1 in pairs:
        c = setup.unit_costs(model, p0, p1)
        v = water_fill(c, bounds, deadline)
        pred = float(c @ v)
        obj = (deadline - pred) ** 2
        key = (round(obj, 15), p0, p1, -float(v.sum()))
        if best is None or key < best[0]:
            best = (key, p0, p1, v, pred, obj)
    _, p0, p1, v, pred, obj = best
    return KnobPolicy(p0, p1, p1, float(v[0]), float(v[1]), float(v[2]), deadline, pred, obj, degraded)


def static_policy(scale: float, deadline: float, vox_min_ref: float = 0.3, v0_ref: float = 46_000.0,
                  v1_ref: float = 150_000.0, v2_ref: float = 150_000.0) -> KnobPolicy:
    p = vox_min_ref * scale
    s3 = scale ** 3
    return KnobPolicy(p, p, p, v0_ref * s3, v1_ref * s3, v2_ref * s3, deadline)
