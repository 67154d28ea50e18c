"""Kinematic drone, stopping distance, ground-truth collisions and energy."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import STOP_COEFFS
from .planning import Trajectory
from .world import GroundTruth, obstacles_near


def d_stop(v: float, scale: float = 1.0) -> float:
    """Stopping distance from speed ``v`` (magnitude form of the fitted quadratic).

    At ``scale`` s the full-scale curve is applied to v/s and the result
    shrunk by s, which keeps the law invariant under the desk similarity.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    a, b, c = STOP_COEFFS
    u = v / scale
    return scale * (a * u * u + b * u + c)


@dataclass
class VehicleState:
    position: np.ndarray
    velocity: float
    heading: np.ndarray
    v_max: float
    a_max: float
    progress: float = 0.0   # arc position along the trajectory being tracked

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.heading = np.asarray(self.heading, dtype=float)
        if not (0.0 <= self.velocity <= self.v_max + 1e-12):
            raise ValueError("velocity must lie in [0, v_max]")


def fly(state: VehicleState, traj: Trajectory | None, duration: float, v_cap: float = math.inf,
        substep: float = 0.05) -> tuple[VehicleState, np.ndarray]:
    """Track ``traj`` for ``duration`` seconds.

    Speed follows the lower of v_max, ``v_cap`` and the speed from which the
    drone can still stop at the trajectory end, changing by at most a_max
    per second.  Returns the new state and the swept positions (first row is
    the start).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    pos0 = state.position.copy()
    if traj is None or len(traj) < 2 or traj.total_length <= 0:
        return replace(state, velocity=0.0, position=pos0), pos0[None].copy()
    L = traj.total_length
    s, v, a = state.progress, state.velocity, state.a_max
    samples = [s]
    t = 0.0
    while t < duration - 1e-12:
        h = min(substep, duration - t)
        t += h
        if s >= L:
            v = 0.0
            continue
        rem = L - s
        target = min(state.v_max, v_cap, math.sqrt(2.0 * a * rem))
        v_new = min(target, v + a * h) if target >= v else max(target, v - a * h)
        ds = 0.5 * (v + v_new) * h
        if ds >= rem or (v_new <= a * h and rem <= v * h):
            # arrival: the braking profile reaches the end inside this substep
            s, v = L, 0.0
        else:
            s, v = s + ds, v_new
        samples.append(s)
    pts = traj.position_at(np.asarray(samples))
    pos = pts[-1]
    heading = state.heading
    if len(pts) > 1 and np.hypot(*(pts[-1] - pts[0])[:2]) > 1e-12:
        d = pts[-1] - pts[0]
        heading = d / np.linalg.norm(d)
    new = replace(state, position=pos.copy(), velocity=float(min(v, state.v_max)), progress=s, heading=heading)
    return new, pts


def step(state: VehicleState, traj: Trajectory | None, dt: float, v_cap: float = math.inf) -> VehicleState:
    """Advance the drone by ``dt`` seconds along ``traj``."""
    return fly(state, traj, dt, v_cap)[0]


def check_collision(gt: GroundTruth, segment: tuple[Sequence[float], Sequence[float]], body_radius: float) -> bool:
    """True iff the body swept along ``segment`` overlaps a pillar (open test)."""
    return bool(swept_collisions(gt, np.asarray([segment[0], segment[1]], dtype=float), body_radius).any())


def swept_collisions(gt: GroundTruth, points: np.ndarray, body_radius: float) -> np.ndarray:
    """Per segment of the polyline ``points``, whether the swept body hits a pillar."""
    pts = np.asarray(points, dtype=float)[:, :2]
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    a, b = pts[:-1], pts[1:]
    if len(gt.centers) == 0:
        return np.zeros(len(a), dtype=bool)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    reach = body_radius + float(gt.radii.max())
    mid = 0.5 * (lo + hi)
    idx = obstacles_near(gt, mid[0], mid[1], 0.5 * float(np.hypot(*(hi - lo))) + reach)
    if len(idx) == 0:
        return np.zeros(len(a), dtype=bool)
    c, r = gt.centers[idx], gt.radii[idx]
    ab = b - a
    L2 = np.sum(ab * ab, axis=1)
    ac = c[None, :, :] - a[:, None, :]
    t = np.clip(np.divide(np.sum(ac * ab[:, None, :], axis=2), L2[:, None],
                          out=np.zeros((len(a), len(c))), where=L2[:, None] > 0), 0.0, 1.0)
    q = a[:, None, :] + t[..., None] * ab[:, None, :]
    dist = np.hypot(*(c[None] - q).transpose(2, 0, 1))
    return np.any(dist < (body_radius + r)[None, :], axis=1)


def clearance_to_pillars(gt: GroundTruth, point: Sequence[float]) -> float:
    """Surface distance from a point to the nearest pillar (inf if none)."""
    if len(gt.centers) == 0:
        return math.inf
    d = np.hypot(*(gt.centers - np.asarray(point, dtype=float)[:2]).T) - gt.radii
    return float(d.min())


@dataclass(frozen=True)
class EnergyModel:
    hover_power: float = 478.0

    def __post_init__(self):
        if self.hover_power <= 0:
            raise ValueError("hover_power must be positive")


def mission_energy(flight_time: float, model: EnergyModel = EnergyModel()) -> float:
    """Energy in joules for a flight of ``flight_time`` seconds at constant power."""
    if flight_time < 0:
        raise ValueError("flight_time must be non-negative")
    return model.hover_power * flight_time
