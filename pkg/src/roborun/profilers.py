"""Read-only spatial feature extraction feeding the governor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .mapping import FREE, OCCUPIED, OccupancyTree, PointCloud, frustum_volume
from .planning import Trajectory, first_blocked, grid_window


@dataclass
class ProfileSnapshot:
    g_min: float
    g_avg: float
    d_obs: float
    d_unknown: float
    v_sensor: float
    v_map: float
    velocity: float
    position: np.ndarray
    trajectory: Trajectory | None = field(default=None, repr=False)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        for name in ("g_min", "g_avg", "d_obs", "d_unknown", "v_sensor", "v_map", "velocity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.g_min > self.g_avg + 1e-12:
            raise ValueError("g_min must not exceed g_avg")

    CSV_COLUMNS = ("g_min", "g_avg", "d_obs", "d_unknown", "v_sensor", "v_map", "velocity", "x", "y", "z")

    def csv_row(self) -> list[str]:
        vals = [self.g_min, self.g_avg, self.d_obs, self.d_unknown, self.v_sensor, self.v_map, self.velocity,
                *self.position[:3]]
        return [f"{v:.6f}" for v in vals]


def cluster_points(points: np.ndarray, link: float) -> np.ndarray:
    """Single-linkage cluster labels for planar points with linkage distance ``link``."""
    pts = np.asarray(points, dtype=float)[:, :2]
    n = len(pts)
    if n == 0:
        return np.empty(0, dtype=int)
    pairs = cKDTree(pts).query_pairs(link, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)[1]


def profile_gaps(cloud: PointCloud, pose: Sequence[float], vox_min: float, sentinel: float,
                 heading: Sequence[float] | None = None) -> tuple[float, float]:
    """Minimum and mean surface gap between neighbouring obstacles in the scan.

    Hit points are grouped by single linkage at 2 * vox_min.  Each cluster
    that reaches into the forward half-space is linked to its nearest
    neighbour cluster; the gap of a link is the smallest point distance.
    Fewer than two clusters yields ``(sentinel, sentinel)``.
    """
    pts = cloud.points[:, :2]
    if len(pts) == 0:
        return sentinel, sentinel
    labels = cluster_points(pts, 2.0 * vox_min)
    k = int(labels.max()) + 1
    if heading is not None:
        fwd = (pts - np.asarray(pose, dtype=float)[:2]) @ np.asarray(heading, dtype=float)[:2] > 0
        keep = np.unique(labels[fwd])
    else:
        keep = np.arange(k)
    if len(keep) < 2:
        return sentinel, sentinel
    groups = [pts[labels == c] for c in keep]
    trees = [cKDTree(g) for g in groups]
    m = len(groups)
    dist = np.full((m, m), np.inf)
    for a in range(m):
        for b in range(a + 1, m):
            d = float(trees[b].query(groups[a], k=1)[0].min())
            dist[a, b] = dist[b, a] = d
    nearest = np.argmin(dist, axis=1)
    links = {tuple(sorted((a, int(nearest[a])))) for a in range(m)}
    gaps = np.array([dist[a, b] for a, b in sorted(links)])
    return float(gaps.min()), float(gaps.mean())


def strict_states(tree: OccupancyTree, level: int, xy: np.ndarray) -> np.ndarray:
    """States at ``level`` under the strict collapse (mixed Free/Unknown reads Unknown)."""
    i, j, ok = tree.cells_of(xy, level)
    out = np.zeros(len(i), dtype=np.uint8)
    st = tree.state[level][i[ok], j[ok]]
    ms = tree.min_state[level][i[ok], j[ok]]
    out[ok] = np.where(st == OCCUPIED, OCCUPIED, np.where(ms >= FREE, FREE, 0))
    return out


def nearest_occupied(tree: OccupancyTree, pose: Sequence[float], search: float | None = None) -> float:
    """Distance from ``pose`` to the nearest Occupied leaf centre minus half its size.

    With ``search`` set only leaves within that radius are considered, and
    the result is inf when there are none.
    """
    pos = np.asarray(pose, dtype=float)[:2]
    best = math.inf
    for level in range(tree.levels):
        p = tree.precision(level)
        k0, k1, l0, l1 = tree.known_window(level)
        if search is not None:
            ci = int(math.floor((pos[0] - tree.origin[0]) / p))
            cj = int(math.floor((pos[1] - tree.origin[1]) / p))
            r = int(math.ceil(search / p)) + 1
            k0, k1 = max(k0, ci - r), min(k1, ci + r + 1)
            l0, l1 = max(l0, cj - r), min(l1, cj + r + 1)
        if k1 <= k0 or l1 <= l0:
            continue
        sub = tree.leaf[level][k0:k1, l0:l1] & (tree.state[level][k0:k1, l0:l1] == OCCUPIED)
        ii, jj = np.nonzero(sub)
        if ii.size == 0:
            continue
        cx = tree.origin[0] + (ii + k0 + 0.5) * p
        cy = tree.origin[1] + (jj + l0 + 0.5) * p
        best = min(best, float(np.min(np.hypot(cx - pos[0], cy - pos[1]))) - 0.5 * p)
    return max(best, 0.0)


def blocked_arcs(traj: Trajectory, tree: OccupancyTree, level: int, s_from: float = 0.0) -> np.ndarray:
    """Arc positions at or after ``s_from`` whose cell at ``level`` is not Free."""
    L = traj.total_length
    step = tree.precision(level) / 4.0
    n = int(math.floor(max(L - s_from, 0.0) / step)) + 1
    s = np.minimum(s_from + np.arange(n + 1) * step, L)
    st = strict_states(tree, level, traj.position_at(s)[:, :2])
    return s[st != FREE]


def distance_to_unknown(tree: OccupancyTree, traj: Trajectory | None, s_from: float,
                        precision: float | None = None, clearance: float = 0.0) -> float:
    """Arc distance from ``s_from`` to the first blocked position, capped at the trajectory end.

    With a positive ``clearance`` the test runs on the finest level and a
    position is blocked once the body of that radius cannot reach it.
    """
    if traj is None or len(traj) == 0:
        return 0.0
    remaining = max(traj.total_length - s_from, 0.0)
    if clearance > 0:
        rest = traj.polyline_from(s_from)
        view = grid_window(tree, rest, clearance + tree.vox_min)
        return min(first_blocked(view, rest, clearance), remaining)
    level = tree.level_of(precision or traj.precision or tree.vox_min)
    blocked = blocked_arcs(traj, tree, level, s_from)
    return min(float(blocked[0]) - s_from, remaining) if blocked.size else remaining


def profile_distances(tree: OccupancyTree, pose: Sequence[float], traj: Trajectory | None,
                      s_from: float = 0.0, search: float | None = None, precision: float | None = None,
                      clearance: float = 0.0) -> tuple[float, float]:
    """(d_obs, d_unknown) for the drone at ``pose`` and arc position ``s_from`` on ``traj``."""
    return (nearest_occupied(tree, pose, search),
            distance_to_unknown(tree, traj, s_from, precision, clearance))


def profile_volumes(tree: OccupancyTree, cloud: PointCloud) -> tuple[float, float]:
    """(v_sensor, v_map): swept scan volume and the known volume of the map."""
    return frustum_volume(cloud, tree.band_height), tree.known_volume


def profile(tree: OccupancyTree, cloud: PointCloud, pose: Sequence[float], heading: Sequence[float],
            velocity: float, traj: Trajectory | None, s_from: float, sentinel: float,
            search: float | None = None, precision: float | None = None,
            clearance: float = 0.0) -> ProfileSnapshot:
    g_min, g_avg = profile_gaps(cloud, pose, tree.vox_min, sentinel, heading)
    d_obs, d_unknown = profile_distances(tree, pose, traj, s_from, search, precision, clearance)
    v_sensor, v_map = profile_volumes(tree, cloud)
    return ProfileSnapshot(g_min, g_avg, d_obs, d_unknown, v_sensor, v_map, velocity, np.asarray(pose), traj)
