"""Perception-to-planning hand-off, RRT* planning and trajectory smoothing.

Planning happens in the horizontal plane of the flight band.  A
``PlannerView`` is a single-resolution snapshot of the map at the
planning precision; collision checks test the exact distance between a
segment and every cell box around it, which covers every cell the
fixed-step walk at ``p2`` would visit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PlannerSettings
from ._kernels import check_segments, rrt_star, window_known
from .mapping import FREE, OCCUPIED, UNKNOWN, Occ, OccupancyTree


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Ordered waypoints with planned speed and visibility per waypoint."""

    waypoints: np.ndarray
    planned_velocity: np.ndarray | None = None
    planned_visibility: np.ndarray | None = None
    v_start: float = 0.0
    v_max: float = math.inf
    a_max: float = math.inf
    precision: float = 0.0
    frontier: bool = False
    reached_goal: bool = False
    explored_volume: float = 0.0
    arc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        n = len(self.waypoints)
        if self.planned_velocity is None:
            self.planned_velocity = np.zeros(n)
        if self.planned_visibility is None:
            self.planned_visibility = np.zeros(n)
        self.planned_velocity = np.asarray(self.planned_velocity, dtype=float)
        self.planned_visibility = np.asarray(self.planned_visibility, dtype=float)
        seg = np.hypot(*np.diff(self.waypoints[:, :2], axis=0).T) if n > 1 else np.empty(0)
        self.arc = np.concatenate([[0.0], np.cumsum(seg)]) if n else np.empty(0)

    @property
    def total_length(self) -> float:
        return float(self.arc[-1]) if len(self.arc) else 0.0

    def __len__(self) -> int:
        return len(self.waypoints)

    def speed_limit(self, s: float) -> float:
        """Largest speed at arc position ``s`` that still stops at the end."""
        rem = max(self.total_length - s, 0.0)
        return min(self.v_max, math.sqrt(2.0 * self.a_max * rem)) if math.isfinite(self.a_max) else self.v_max

    def position_at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.total_length)
        if len(self.waypoints) == 1:
            return np.broadcast_to(self.waypoints[0], s.shape + (3,)).copy()
        k = np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.arc) - 2)
        seg = self.arc[k + 1] - self.arc[k]
        t = np.divide(s - self.arc[k], seg, out=np.zeros_like(s), where=seg > 0)
        a, b = self.waypoints[k], self.waypoints[k + 1]
        return a + (b - a) * t[..., None]

    def ahead(self, s: float) -> np.ndarray:
        """Indices of waypoints strictly beyond arc position ``s``."""
        return np.flatnonzero(self.arc > s + 1e-12)

    def polyline_from(self, s: float) -> np.ndarray:
        idx = self.ahead(s)
        return np.vstack([self.position_at(s)[None], self.waypoints[idx]])


class NoPath(Exception):
    def __init__(self, reason: str, explored_volume: float = 0.0):
        super().__init__(reason)
        self.explored_volume = explored_volume


@dataclass(frozen=True)
class PlanBudget:
    p2: float
    v2: float

    def __post_init__(self):
        if self.v2 < 0:
            raise ValueError("v2 must be non-negative")


# ---------------------------------------------------------------------------
# hand-off


@dataclass
class PlannerView:
    """Map snapshot at one precision; cells outside the grid read Unknown."""

    precision: float
    volume_cap: float
    volume: float
    origin: np.ndarray
    grid: np.ndarray
    band_height: float
    z_min: float = 0.0

    @property
    def column_volume(self) -> float:
        return self.precision ** 2 * self.band_height

    @property
    def known_volume(self) -> float:
        return float(np.count_nonzero(self.grid)) * self.column_volume

    def cell_index(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ij = np.floor((xy - self.origin) / self.precision).astype(np.int64)
        nx, ny = self.grid.shape
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < nx) & (ij[:, 1] >= 0) & (ij[:, 1] < ny)
        return ij[:, 0], ij[:, 1], ok

    def states(self, xy: np.ndarray) -> np.ndarray:
        i, j, ok = self.cell_index(xy)
        out = np.zeros(len(i), dtype=np.uint8)
        out[ok] = self.grid[i[ok], j[ok]]
        return out

    def query(self, point: Sequence[float]) -> Occ:
        if len(point) > 2 and not (self.z_min <= point[2] < self.z_min + self.band_height):
            return Occ.UNKNOWN
        return Occ(int(self.states(np.asarray(point[:2]))[0]))


def collapsed_grid(tree: OccupancyTree, level: int, sl=(slice(None), slice(None))) -> np.ndarray:
    """Level grid under the strict collapse rule (mixed Free/Unknown reads Unknown)."""
    st = tree.state[level][sl]
    ms = tree.min_state[level][sl]
    return np.where(st == OCCUPIED, OCCUPIED, np.where(ms >= FREE, FREE, UNKNOWN)).astype(np.uint8)


def handoff(tree: OccupancyTree, p1: float, v1: float, drone_pos: Sequence[float]) -> PlannerView:
    """Hand the known map near the drone to the planner at precision ``p1``.

    Cells are taken in order of the distance from the drone to the cell box
    until their known volume would exceed ``v1``.
    """
    level = tree.level_of(p1)
    col = tree.column_volume(level)
    nx, ny = tree.shapes[level]
    pos = np.asarray(drone_pos, dtype=float)[:2]
    budget_cells = int(math.floor(v1 / col + 1e-9)) if math.isfinite(v1) else nx * ny
    empty = PlannerView(p1, v1, 0.0, tree.origin.copy(), np.zeros((0, 0), dtype=np.uint8), tree.band_height, tree.z_min)
    if budget_cells <= 0:
        return empty

    ci = int(math.floor((pos[0] - tree.origin[0]) / p1))
    cj = int(math.floor((pos[1] - tree.origin[1]) / p1))
    k0, k1, l0, l1 = tree.known_window(level)
    if k1 <= k0:
        return empty
    radius = max(int(math.ceil(math.sqrt(budget_cells / math.pi) * 1.5)) + 2, 4)
    st, ms = tree.state[level], tree.min_state[level]
    while True:
        i0, i1 = max(ci - radius, k0), min(ci + radius + 1, k1)
        j0, j1 = max(cj - radius, l0), min(cj + radius + 1, l1)
        whole = i0 == k0 and j0 == l0 and i1 == k1 and j1 == l1
        if i1 <= i0 or j1 <= j0:
            radius *= 2
            continue
        gi, gj, val, dist = window_known(st, ms, i0, i1, j0, j1, float(pos[0]), float(pos[1]),
                                         float(tree.origin[0]), float(tree.origin[1]), p1)
        if len(gi) <= budget_cells:
            if whole:
                break
            radius *= 2
            continue
        order = np.argpartition(dist, budget_cells - 1)[:budget_cells]
        # the chosen cells are globally nearest only if none lie outside the window
        inscribed = (radius - 1) * p1
        if dist[order].max() <= inscribed or whole:
            order.sort()
            gi, gj, val = gi[order], gj[order], val[order]
            break
        radius *= 2

    if len(gi) == 0:
        return empty
    a0, b0 = int(gi.min()), int(gj.min())
    crop = np.zeros((int(gi.max()) - a0 + 1, int(gj.max()) - b0 + 1), dtype=np.uint8)
    crop[gi - a0, gj - b0] = val
    origin = tree.origin + np.array([a0 * p1, b0 * p1])
    return PlannerView(p1, v1, len(gi) * col, origin, crop, tree.band_height, tree.z_min)


def _box_distance(pos, origin, p, gi, gj) -> np.ndarray:
    lo_x = origin[0] + gi * p
    lo_y = origin[1] + gj * p
    dx = np.maximum(np.maximum(lo_x - pos[0], pos[0] - (lo_x + p)), 0.0)
    dy = np.maximum(np.maximum(lo_y - pos[1], pos[1] - (lo_y + p)), 0.0)
    return np.hypot(dx, dy)


# ---------------------------------------------------------------------------
# collision checking with a volume monitor


class _Checker:
    """Exact segment-versus-cell tests on a view, with explored-volume accounting."""

    def __init__(self, view: PlannerView, clearance: float, cap_volume: float,
                 anchor: Sequence[float] | None = None):
        self.view = view
        self.p = view.precision
        self.clearance = clearance
        # segments leaving the anchor may keep the anchor's own (smaller) clearance
        self.anchor = (math.nan, math.nan) if anchor is None else (float(anchor[0]), float(anchor[1]))
        self.anchor_clearance = (anchor_clearance(view, anchor, clearance)
                                 if anchor is not None and view.grid.size else clearance)
        self.k = int(math.ceil(clearance / self.p)) if clearance > 0 else 0
        self.touched = np.zeros(view.grid.shape, dtype=bool)
        self.count = 0
        self.cap = int(math.floor(cap_volume / view.column_volume + 1e-9)) if math.isfinite(cap_volume) else -1
        self.tripped = False

    @property
    def explored_volume(self) -> float:
        return self.count * self.view.column_volume

    def segments_free(self, a: np.ndarray, b: np.ndarray, account: bool = True) -> np.ndarray:
        """Check segments a[k] -> b[k]; returns a bool per segment."""
        a = np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype=float))[:, :2])
        b = np.ascontiguousarray(np.atleast_2d(np.asarray(b, dtype=float))[:, :2])
        if self.tripped and account:
            return np.zeros(len(a), dtype=bool)
        ok, self.count, tripped = check_segments(
            self.view.grid, float(self.view.origin[0]), float(self.view.origin[1]), self.p,
            float(self.clearance), a, b, self.touched, self.count, self.cap, account,
            self.anchor[0], self.anchor[1], float(self.anchor_clearance))
        self.tripped = self.tripped or tripped
        return ok


def path_is_clear(view: PlannerView, points: np.ndarray, clearance: float = 0.0) -> bool:
    """True when every segment of the polyline is traversable in ``view``."""
    pts = np.asarray(points, dtype=float).reshape(-1, np.asarray(points).shape[-1])
    if len(pts) == 0:
        return True
    chk = _Checker(view, clearance, math.inf, pts[0])
    if len(pts) == 1:
        return bool(chk.segments_free(pts, pts, account=False)[0])
    return bool(np.all(chk.segments_free(pts[:-1], pts[1:], account=False)))


# ---------------------------------------------------------------------------
# RRT*


def plan(view: PlannerView, start: Sequence[float], goal: Sequence[float], budget: PlanBudget,
         rng_seed: int, settings: PlannerSettings = PlannerSettings(), clearance: float = 0.0,
         window_radius: float | None = None, goal_tolerance: float | None = None) -> Trajectory:
    """Grow an RRT* tree from ``start`` toward ``goal`` over Free cells of ``view``.

    Returns the best path reaching the goal, else the path to the node
    nearest the goal (``frontier`` set).  Raises ``NoPath`` when the start is
    not traversable, the volume cap stops the search before the first
    expansion, or no node besides the start was added.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    z = float(start[2]) if len(start) > 2 else 0.0
    s2, g2 = start[:2], goal[:2]
    p = budget.p2
    if not math.isclose(p, view.precision, rel_tol=1e-9):
        raise ValueError("planning precision must equal the hand-off precision")
    chk = _Checker(view, clearance, budget.v2, s2)
    if view.grid.size == 0 or budget.v2 <= 0:
        raise NoPath("empty view or zero exploration budget", 0.0)
    # the start may touch obstacles after a coarse re-mapping; require only a Free cell
    if view.states(s2)[0] != FREE:
        raise NoPath("start is not in known free space", 0.0)
    chk.segments_free(s2, s2)
    if chk.tripped:
        raise NoPath("volume cap reached at the start", chk.explored_volume)

    rng = np.random.default_rng(rng_seed)
    step = settings.steer_factor * p
    tol = step if goal_tolerance is None else goal_tolerance

    if window_radius is None:
        free_i, free_j = np.nonzero(view.grid == FREE)
    else:
        # only the window's bounding box can hold samples
        nx, ny = view.grid.shape
        i0 = min(max(int(math.floor((s2[0] - window_radius - view.origin[0]) / p)), 0), nx)
        i1 = min(max(int(math.floor((s2[0] + window_radius - view.origin[0]) / p)) + 1, 0), nx)
        j0 = min(max(int(math.floor((s2[1] - window_radius - view.origin[1]) / p)), 0), ny)
        j1 = min(max(int(math.floor((s2[1] + window_radius - view.origin[1]) / p)) + 1, 0), ny)
        free_i, free_j = np.nonzero(view.grid[i0:i1, j0:j1] == FREE)
        free_i, free_j = free_i + i0, free_j + j0
    if window_radius is not None and len(free_i):
        cx = view.origin[0] + (free_i + 0.5) * p - s2[0]
        cy = view.origin[1] + (free_j + 0.5) * p - s2[1]
        near = cx * cx + cy * cy <= window_radius ** 2
        free_i, free_j = free_i[near], free_j[near]
    n_free = len(free_i)
    span = math.sqrt(max(n_free, 1)) * p

    # more samples than free cells only re-test the same cells
    iters = min(settings.max_samples, max(n_free, 1))
    u_bias = rng.random(iters)
    pick = rng.integers(0, max(n_free, 1), size=iters)
    jitter = rng.random((iters, 2))
    nodes, parent, cost, n, goal_parent, goal_cost, chk.count, tripped = rrt_star(
        view.grid, float(view.origin[0]), float(view.origin[1]), p, float(clearance),
        float(s2[0]), float(s2[1]), float(g2[0]), float(g2[1]), step, tol, settings.gamma * span,
        u_bias, settings.goal_bias, pick, jitter, free_i.astype(np.int64), free_j.astype(np.int64),
        chk.touched, chk.count, chk.cap, float(chk.anchor_clearance))
    chk.tripped = chk.tripped or tripped

    if goal_parent >= 0:
        chain = _chain(parent, goal_parent)
        pts = np.vstack([nodes[chain], g2[None]])
        if np.hypot(*(pts[-1] - pts[-2])) < 1e-12:
            pts = pts[:-1]
        reached = True
    else:
        if n == 1:
            raise NoPath("no admissible expansion", chk.explored_volume)
        dg = np.hypot(*(nodes[:n] - g2).T)
        best = int(np.argmin(dg))
        if best == 0:
            raise NoPath("no progress toward the goal", chk.explored_volume)
        pts = nodes[_chain(parent, best)]
        reached = False
    wps = np.column_stack([pts, np.full(len(pts), z)])
    return Trajectory(wps, precision=p, frontier=not reached, reached_goal=reached,
                      explored_volume=chk.explored_volume)


def _chain(parent: np.ndarray, leaf: int) -> list[int]:
    out = [leaf]
    while parent[out[-1]] >= 0:
        out.append(int(parent[out[-1]]))
    return out[::-1]


# ---------------------------------------------------------------------------
# smoothing and annotation


def shortcut(points: np.ndarray, view: PlannerView | None, clearance: float = 0.0) -> np.ndarray:
    """Greedy shortcutting: jump to the farthest waypoint reachable in a straight line."""
    pts = np.asarray(points, dtype=float)
    if len(pts) <= 2 or view is None:
        return pts.copy()
    chk = _Checker(view, clearance, math.inf, pts[0])
    out = [0]
    i = 0
    while i < len(pts) - 1:
        ahead = np.arange(len(pts) - 1, i, -1)
        ok = chk.segments_free(np.repeat(pts[i][None], len(ahead), axis=0), pts[ahead], account=False)
        j = int(ahead[int(np.argmax(ok))]) if ok.any() else i + 1
        out.append(j)
        i = j
    return pts[out]


def trapezoid_speeds(arc: np.ndarray, v_max: float, a_max: float, v_start: float = 0.0) -> np.ndarray:
    """Speed at each arc position under accel and decel limits, ending at rest."""
    total = arc[-1] if len(arc) else 0.0
    up = np.sqrt(v_start ** 2 + 2.0 * a_max * arc)
    down = np.sqrt(np.maximum(2.0 * a_max * (total - arc), 0.0))
    return np.minimum(np.minimum(up, down), v_max)


def resample(points: np.ndarray, spacing: float) -> np.ndarray:
    """Insert points so no segment is longer than ``spacing`` (corners kept)."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2 or spacing <= 0:
        return pts.copy()
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        L = float(np.hypot(*(b - a)[:2]))
        k = max(int(math.ceil(L / spacing - 1e-9)), 1)
        t = (np.arange(1, k + 1) / k)[:, None]
        out.append(a + (b - a) * t)
    return np.vstack(out)


def smooth(path: Trajectory, v_max: float, a_max: float, view: PlannerView | None = None,
           clearance: float = 0.0, v_start: float = 0.0, spacing: float | None = None) -> Trajectory:
    """Shortcut the path, then attach a trapezoidal speed profile ending at rest."""
    pts = shortcut(path.waypoints, view, clearance)
    if spacing:
        pts = resample(pts, spacing)
    v0 = min(v_start, v_max)
    out = replace(path, waypoints=pts, planned_velocity=None, planned_visibility=None,
                  v_start=v0, v_max=v_max, a_max=a_max)
    out.planned_velocity = trapezoid_speeds(out.arc, v_max, a_max, v0)
    return out


def first_blocked_arc(traj: Trajectory, states_fn, step: float, s_from: float = 0.0) -> float:
    """Arc position of the first non-Free sample at or after ``s_from`` (inf if none)."""
    L = traj.total_length
    if len(traj) == 0:
        return s_from
    n = int(math.floor(max(L - s_from, 0.0) / step)) + 1
    s = np.minimum(s_from + np.arange(n + 1) * step, L)
    st = states_fn(traj.position_at(s)[:, :2])
    bad = np.flatnonzero(st != FREE)
    return float(s[bad[0]]) if bad.size else math.inf


def first_blocked(view: PlannerView, points: np.ndarray, clearance: float = 0.0,
                  step: float | None = None) -> float:
    """Arc distance along the polyline to the first position the body cannot reach.

    Uses the planner's segment test with the first point as anchor, so a
    path leaving a tight spot is not blocked at its start.  Returns inf when
    the whole polyline is traversable.
    """
    pts = np.asarray(points, dtype=float)[:, :2]
    if len(pts) == 0:
        return math.inf
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    chk = _Checker(view, clearance, math.inf, pts[0])
    ok = chk.segments_free(pts[:-1], pts[1:], account=False)
    if ok.all():
        return math.inf
    i = int(np.argmin(ok))
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc0 = float(np.sum(seg[:i]))
    step = view.precision / 4.0 if step is None else step
    n = max(int(math.ceil(seg[i] / step)), 1)
    t = np.arange(n + 1) / n
    a = pts[i]
    q = a[None] + (pts[i + 1] - a)[None] * t[:, None]
    sub = chk.segments_free(np.repeat(a[None], len(q), axis=0), q, account=False)
    j = int(np.argmin(sub))           # sub[-1] is False, so a failure exists
    return arc0 + (float(t[j - 1]) * seg[i] if j > 0 else 0.0)


def annotate_visibility(traj: Trajectory, view: PlannerView, max_range: float = math.inf) -> Trajectory:
    """Per waypoint, the distance along the path to the first non-Free cell."""
    step = view.precision / 4.0
    L = traj.total_length
    if len(traj) == 0:
        return traj
    n = int(math.floor(L / step)) + 1
    s = np.minimum(np.arange(n + 1) * step, L)
    st = view.states(traj.position_at(s)[:, :2])
    blocked = s[st != FREE]
    vis = np.empty(len(traj))
    for k, sk in enumerate(traj.arc):
        later = blocked[blocked >= sk - 1e-12]
        limit = (later[0] - sk) if later.size else (L - sk)
        vis[k] = min(max(limit, 0.0), max_range)
    traj.planned_visibility = vis
    return traj


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_index", "x", "y", "z", "v_planned", "visibility_m"])
        for k, (p, v, d) in enumerate(zip(traj.waypoints, traj.planned_velocity, traj.planned_visibility)):
            w.writerow([k, f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", f"{v:.6f}", f"{d:.6f}"])


def occupied_distance(view: PlannerView, point: Sequence[float], radius: float) -> float:
    """Distance from ``point`` to the nearest Occupied cell box within ``radius`` (inf if none)."""
    if view.grid.size == 0:
        return math.inf
    p = view.precision
    xy = np.asarray(point, dtype=float)[:2]
    k = int(math.ceil(radius / p)) + 1
    i, j, _ = view.cell_index(xy)
    i0, i1 = max(int(i[0]) - k, 0), min(int(i[0]) + k + 1, view.grid.shape[0])
    j0, j1 = max(int(j[0]) - k, 0), min(int(j[0]) + k + 1, view.grid.shape[1])
    if i1 <= i0 or j1 <= j0:
        return math.inf
    ii, jj = np.nonzero(view.grid[i0:i1, j0:j1] == OCCUPIED)
    if ii.size == 0:
        return math.inf
    return float(_box_distance(xy, view.origin, p, ii + i0, jj + j0).min())


def anchor_clearance(view: PlannerView, point: Sequence[float], clearance: float) -> float:
    """Clearance allowed for segments leaving ``point``: never more than it already has."""
    if clearance <= 0:
        return clearance
    return min(clearance, 0.999 * occupied_distance(view, point, clearance))


def grid_window(tree: OccupancyTree, points: np.ndarray, margin: float) -> PlannerView:
    """Finest-level view of the tree around a polyline (no volume selection)."""
    pts = np.asarray(points, dtype=float)[:, :2]
    p = tree.vox_min
    lo = np.floor((pts.min(axis=0) - margin - tree.origin) / p).astype(int)
    hi = np.floor((pts.max(axis=0) + margin - tree.origin) / p).astype(int) + 1
    nx, ny = tree.shapes[0]
    i0, j0 = max(lo[0], 0), max(lo[1], 0)
    i1, j1 = min(hi[0], nx), min(hi[1], ny)
    if i1 <= i0 or j1 <= j0:
        return PlannerView(p, math.inf, 0.0, tree.origin.copy(), np.zeros((0, 0), dtype=np.uint8),
                           tree.band_height, tree.z_min)
    grid = tree.state[0][i0:i1, j0:j1]
    origin = tree.origin + np.array([i0 * p, j0 * p])
    return PlannerView(p, math.inf, 0.0, origin, grid, tree.band_height, tree.z_min)
