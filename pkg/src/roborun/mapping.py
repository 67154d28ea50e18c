"""Depth sensing, point-cloud down-sampling and the occupancy octree.

The world is z-invariant and the drone flies inside a band that is exactly
one coarsest voxel tall.  Every octree node therefore has children that
come in identical vertical pairs, so the tree is stored level by level as
2-D grids of *columns*: a cell at level l stands for a stack of
``band / p_l`` cubic voxels of side ``p_l`` that always share one state.
Voxel counts and volumes are reported for the cubic voxels.

Each level keeps three aggregates over its descendants:

* ``max``: Occupied if any descendant is Occupied, Free if any is Free,
  else Unknown (the query rule);
* ``min``: Free only when every descendant is Free (the hand-off collapse
  rule);
* ``occ_level``: the finest level at which an Occupied leaf was written.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import cells_seen_free, fill_level, walk_rays
from .config import Physics
from .world import GroundTruth, obstacles_near

UNKNOWN, FREE, OCCUPIED = 0, 1, 2
NO_LEVEL = 255


class Occ(IntEnum):
    UNKNOWN = UNKNOWN
    FREE = FREE
    OCCUPIED = OCCUPIED


@dataclass
class PointCloud:
    """One scan: hit points plus the free-space endpoints of rays that hit nothing.

    ``ranges`` holds the horizontal range of every cast ray (hit distance or
    max range) and ``ray_angle`` the angular spacing, which together give the
    swept sensor volume.
    """

    origin: np.ndarray
    points: np.ndarray
    max_range: float
    free_endpoints: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    ranges: np.ndarray = field(default_factory=lambda: np.empty(0))
    ray_angle: float = 0.0
    fov: float = 2.0 * math.pi
    angles: np.ndarray = field(default_factory=lambda: np.empty(0))   # bearing of each cast ray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float).ravel()
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.free_endpoints = np.asarray(self.free_endpoints, dtype=float).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.points)


def ray_directions(heading: Sequence[float], physics: Physics,
                   frusta: Sequence[tuple[float, float]] | None = None) -> np.ndarray:
    """Horizontal unit vectors covering the configured frusta.

    Each frustum is (centre offset from heading, width) in degrees.
    """
    frusta = physics.frusta_deg if frusta is None else frusta
    base = math.atan2(heading[1], heading[0])
    step = physics.ray_step_deg
    angles = []
    for centre, width in frusta:
        n = max(int(round(width / step)), 1)
        local = centre - 0.5 * width + (np.arange(n) + 0.5) * (width / n)
        angles.append(np.deg2rad(local))
    theta = base + np.concatenate(angles) if angles else np.empty(0)
    return np.column_stack([np.cos(theta), np.sin(theta)])


def sense(gt: GroundTruth, pose: Sequence[float], heading: Sequence[float], physics: Physics,
          frusta: Sequence[tuple[float, float]] | None = None,
          max_range: float | None = None) -> PointCloud:
    """Cast horizontal rays and return the first pillar hit along each."""
    origin = np.asarray(pose, dtype=float)
    rng = physics.sensor_range if max_range is None else max_range
    dirs = ray_directions(heading, physics, frusta)
    n = len(dirs)
    t_hit = np.full(n, np.inf)
    near = obstacles_near(gt, origin[0], origin[1], rng)
    if len(near):
        c = gt.centers[near] - origin[:2]
        r = gt.radii[near]
        tca = dirs @ c.T
        d2 = np.sum(c * c, axis=1)[None, :] - tca ** 2
        disc = r[None, :] ** 2 - d2
        with np.errstate(invalid="ignore"):
            t = tca - np.sqrt(np.where(disc >= 0, disc, np.nan))
        t[(disc < 0) | (t < 0)] = np.inf
        t_hit = t.min(axis=1) if t.size else t_hit
    hit = t_hit <= rng
    ranges = np.where(hit, t_hit, rng)
    pts = origin[None, :2] + dirs * ranges[:, None]
    z = np.full((n, 1), origin[2])
    xyz = np.hstack([pts, z])
    fov = sum(w for _, w in (physics.frusta_deg if frusta is None else frusta))
    return PointCloud(origin=origin, points=xyz[hit], max_range=rng, free_endpoints=xyz[~hit],
                      ranges=ranges, ray_angle=math.radians(fov) / max(n, 1), fov=math.radians(fov),
                      angles=np.arctan2(dirs[:, 1], dirs[:, 0]))


def _cell_means(points: np.ndarray, p0: float) -> np.ndarray:
    if len(points) == 0:
        return points
    cells = np.floor(points / p0).astype(np.int64)
    lo = cells.min(axis=0)
    span = cells.max(axis=0) - lo + 1
    keys = np.ravel_multi_index(tuple((cells - lo).T), tuple(span))
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    uniq = cells[first]
    counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
    means = np.zeros((len(uniq), 3))
    for k in range(3):
        means[:, k] = np.bincount(inverse, weights=points[:, k], minlength=len(uniq)) / counts
    # rounding can push a mean across its cell face; keep a member point instead
    drift = np.any(np.floor(means / p0).astype(np.int64) != uniq, axis=1)
    means[drift] = points[first[drift]]
    return means


def downsample_cloud(cloud: PointCloud, p0: float) -> PointCloud:
    """Replace the points of each cubic cell of side ``p0`` by their mean."""
    if p0 <= 0:
        raise ValueError("p0 must be positive")
    return PointCloud(origin=cloud.origin, points=_cell_means(cloud.points, p0), max_range=cloud.max_range,
                      free_endpoints=_cell_means(cloud.free_endpoints, p0), ranges=cloud.ranges,
                      ray_angle=cloud.ray_angle, fov=cloud.fov, angles=cloud.angles)


def visible_free(cloud: PointCloud, xy: np.ndarray) -> np.ndarray:
    """Whether each point is closer to the sensor than both rays bracketing its bearing."""
    xy = np.asarray(xy, dtype=float).reshape(-1, np.asarray(xy).shape[-1])[:, :2]
    out = np.zeros(len(xy), dtype=bool)
    if cloud.angles.size == 0 or len(xy) == 0:
        return out
    d = xy - cloud.origin[None, :2]
    r = np.hypot(d[:, 0], d[:, 1])
    theta0 = float(cloud.angles[0])
    A = np.mod(cloud.angles - theta0, 2.0 * math.pi)
    order = np.argsort(A, kind="stable")
    A, R = A[order], cloud.ranges[order]
    A = np.append(A, A[0] + 2.0 * math.pi)     # the last ray also brackets with the first
    R = np.append(R, R[0])
    a = np.mod(np.arctan2(d[:, 1], d[:, 0]) - theta0, 2.0 * math.pi)
    k = np.clip(np.searchsorted(A, a, side="right"), 1, len(A) - 1)
    lo, hi = k - 1, k
    adjacent = A[hi] - A[lo] <= 1.5 * cloud.ray_angle
    return adjacent & (r < np.minimum(R[lo], R[hi]))


def frustum_volume(cloud: PointCloud, band_height: float) -> float:
    """Band-limited sensor volume swept by the scan (rays truncated at hits)."""
    if cloud.ranges.size == 0:
        return 0.0
    return float(0.5 * cloud.ray_angle * np.sum(cloud.ranges ** 2) * band_height)


class OccupancyTree:
    """Multi-resolution ternary occupancy map over a rectangular arena.

    Level l has voxel side ``vox_min * 2**l``; level ``levels - 1`` is the
    coarsest admissible precision and also the height of the flight band.
    """

    def __init__(self, xmin: float, ymin: float, xmax: float, ymax: float,
                 vox_min: float, levels: int = 6, z_min: float = 0.0):
        self.vox_min = float(vox_min)
        self.levels = int(levels)
        self.max_depth = self.levels
        self.origin = np.array([xmin, ymin], dtype=float)
        self.z_min = float(z_min)
        self.band_height = self.vox_min * 2 ** (self.levels - 1)
        coarse = self.band_height
        ncx = max(int(math.ceil((xmax - xmin) / coarse - 1e-9)), 1)
        ncy = max(int(math.ceil((ymax - ymin) / coarse - 1e-9)), 1)
        self.shapes = [(ncx << (self.levels - 1 - l), ncy << (self.levels - 1 - l)) for l in range(self.levels)]
        self.state = [np.zeros(s, dtype=np.uint8) for s in self.shapes]
        self.min_state = [np.zeros(s, dtype=np.uint8) for s in self.shapes]
        self.occ_level = [np.full(s, NO_LEVEL, dtype=np.uint8) for s in self.shapes]
        self.leaf = [np.zeros(s, dtype=bool) for s in self.shapes]
        self._known_fine = 0
        # coarsest-level index box [i0, i1) x [j0, j1) enclosing every known cell
        self.known_box = (0, 0, 0, 0)

    @classmethod
    def for_world(cls, gt: GroundTruth, physics: Physics) -> "OccupancyTree":
        b = gt.bounds
        return cls(b.xmin, b.ymin, b.xmax, b.ymax, physics.vox_min, physics.levels)

    # geometry -------------------------------------------------------------
    def precision(self, level: int) -> float:
        return self.vox_min * (2 ** level)

    def level_of(self, precision: float) -> int:
        ratio = precision / self.vox_min
        level = int(round(math.log2(ratio))) if ratio > 0 else -1
        if level < 0 or level >= self.levels or not math.isclose(2 ** level, ratio, rel_tol=1e-6):
            raise ValueError(f"precision {precision} is not an admissible voxel size")
        return level

    @property
    def root_size(self) -> float:
        extent = max(self.shapes[0]) * self.vox_min
        return self.vox_min * 2 ** int(math.ceil(math.log2(extent / self.vox_min)))

    @property
    def extent(self) -> tuple[float, float]:
        return self.shapes[0][0] * self.vox_min, self.shapes[0][1] * self.vox_min

    def column_volume(self, level: int) -> float:
        p = self.precision(level)
        return p * p * self.band_height

    def voxels_per_column(self, level: int) -> int:
        return 2 ** (self.levels - 1 - level)

    def cells_of(self, xy: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer cell indices of points and a mask of those inside the arena."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        p = self.precision(level)
        ij = np.floor((xy - self.origin) / p).astype(np.int64)
        nx, ny = self.shapes[level]
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < nx) & (ij[:, 1] >= 0) & (ij[:, 1] < ny)
        return ij[:, 0], ij[:, 1], ok

    def inside_band(self, z: float) -> bool:
        return self.z_min <= z < self.z_min + self.band_height

    def cell_center(self, level: int, i, j) -> np.ndarray:
        p = self.precision(level)
        return np.column_stack([self.origin[0] + (np.asarray(i) + 0.5) * p,
                                self.origin[1] + (np.asarray(j) + 0.5) * p])

    # bookkeeping ----------------------------------------------------------
    @property
    def known_volume(self) -> float:
        """Volume of all leaves whose state is not Unknown."""
        return self._known_fine * self.column_volume(0)

    def leaf_count(self, state: int | None = None) -> int:
        """Number of cubic leaves, optionally restricted to one state."""
        total = 0
        for l in range(self.levels):
            mask = self.leaf[l] if state is None else (self.leaf[l] & (self.state[l] == state))
            total += int(np.count_nonzero(mask)) * self.voxels_per_column(l)
        return total

    def known_window(self, level: int) -> tuple[int, int, int, int]:
        """Index box at ``level`` that encloses every known cell."""
        f = 1 << (self.levels - 1 - level)
        i0, i1, j0, j1 = self.known_box
        return i0 * f, i1 * f, j0 * f, j1 * f

    def copy(self) -> "OccupancyTree":
        out = object.__new__(OccupancyTree)
        out.__dict__.update(self.__dict__)
        for name in ("state", "min_state", "occ_level", "leaf"):
            setattr(out, name, [a.copy() for a in getattr(self, name)])
        return out

    def digest(self) -> int:
        """Cheap content hash used to check read-only access."""
        h = 0
        for l in range(self.levels):
            h = hash((h, self.state[l].tobytes(), self.leaf[l].tobytes()))
        return h

    # writes ---------------------------------------------------------------
    def write(self, level: int, ii: np.ndarray, jj: np.ndarray, state: int) -> int:
        """Set cells at ``level`` to ``state``; returns the number of cells written.

        A Free write skips cells that hold Occupied evidence from a finer
        level: a coarse free sample cannot clear a finer obstacle.
        """
        ii = np.asarray(ii, dtype=np.int64)
        jj = np.asarray(jj, dtype=np.int64)
        if ii.size == 0:
            return 0
        ny = self.shapes[level][1]
        key = np.unique(ii * ny + jj)
        ii, jj = key // ny, key % ny
        if state == FREE and level > 0:
            keep = self.occ_level[level][ii, jj] >= level
            ii, jj = ii[keep], jj[keep]
            if ii.size == 0:
                return 0
        if state != UNKNOWN:
            k = self.levels - 1 - level
            box = (int(ii.min() >> k), int(ii.max() >> k) + 1, int(jj.min() >> k), int(jj.max() >> k) + 1)
            old = self.known_box
            if old[1] > old[0]:
                box = (min(box[0], old[0]), max(box[1], old[1]), min(box[2], old[2]), max(box[3], old[3]))
            self.known_box = box
        self._split_ancestors(level, ii, jj)
        self._fill_block(level, ii, jj, state)
        self._refresh_ancestors(level, ii, jj)
        return int(ii.size)

    def _split_ancestors(self, level: int, ii: np.ndarray, jj: np.ndarray) -> None:
        for m in range(self.levels - 1, level, -1):
            k = m - level
            ny = self.shapes[m][1]
            key = np.unique((ii >> k) * ny + (jj >> k))
            ai, aj = key // ny, key % ny
            hit = self.leaf[m][ai, aj]
            if not hit.any():
                continue
            ai, aj = ai[hit], aj[hit]
            self.leaf[m][ai, aj] = False
            child = self.leaf[m - 1]
            for a in (0, 1):
                for b in (0, 1):
                    child[2 * ai + a, 2 * aj + b] = True

    def _fill_block(self, level: int, ii: np.ndarray, jj: np.ndarray, state: int) -> None:
        occ = level if state == OCCUPIED else NO_LEVEL
        for k in range(level, -1, -1):
            before = fill_level(self.state[k], self.min_state[k], self.occ_level[k], self.leaf[k],
                                ii, jj, 1 << (level - k), state, occ)
            if k == 0:
                after = ii.size * (1 << level) ** 2 if state != UNKNOWN else 0
                self._known_fine += after - before
        self.leaf[level][ii, jj] = state != UNKNOWN

    def _refresh_ancestors(self, level: int, ii: np.ndarray, jj: np.ndarray) -> None:
        ci, cj = ii, jj
        for m in range(level + 1, self.levels):
            ny = self.shapes[m][1]
            key = np.unique((ci >> 1) * ny + (cj >> 1))
            ci, cj = key // ny, key % ny
            a, b = 2 * ci, 2 * cj
            for name, op in (("state", np.maximum), ("min_state", np.minimum), ("occ_level", np.minimum)):
                child = getattr(self, name)[m - 1]
                getattr(self, name)[m][ci, cj] = op(op(child[a, b], child[a + 1, b]),
                                                     op(child[a, b + 1], child[a + 1, b + 1]))

    # reads ----------------------------------------------------------------
    def query(self, point: Sequence[float], at_precision: float) -> Occ:
        level = self.level_of(at_precision)
        if len(point) > 2 and not self.inside_band(point[2]):
            return Occ.UNKNOWN
        i, j, ok = self.cells_of(np.asarray(point[:2]), level)
        if not ok[0]:
            return Occ.UNKNOWN
        return Occ(int(self.state[level][i[0], j[0]]))

    def leaves(self):
        """Yield (x, y, z, size, state) for every cubic leaf."""
        for l in range(self.levels):
            p = self.precision(l)
            idx = np.argwhere(self.leaf[l])
            for i, j in idx:
                x = self.origin[0] + (i + 0.5) * p
                y = self.origin[1] + (j + 0.5) * p
                st = int(self.state[l][i, j])
                for k in range(self.voxels_per_column(l)):
                    yield x, y, self.z_min + (k + 0.5) * p, p, st


def query(tree: OccupancyTree, point: Sequence[float], at_precision: float) -> Occ:
    return tree.query(point, at_precision)


@dataclass(frozen=True)
class InsertionBudget:
    p0: float
    v0: float

    def __post_init__(self):
        if self.v0 < 0:
            raise ValueError("v0 must be non-negative")


@dataclass(frozen=True)
class IntegrationResult:
    volume: float          # newly touched known volume (the budgeted quantity)
    cells: int             # newly touched columns at p0
    voxels: int            # newly touched cubic voxels at p0
    swept_volume: float    # ray-swept volume counting repeats
    rays: int              # rays fully integrated


def distance_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Planar distance from each point to a polyline (or a single point)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(poly) == 1:
        return np.hypot(*(points - poly[0]).T)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    L2 = np.maximum(np.sum(ab * ab, axis=1), 1e-18)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(ap * ab[None], axis=2) / L2[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    return np.min(np.hypot(*(points[:, None, :] - proj).transpose(2, 0, 1)), axis=1)




def _cells_seen_free(tree: OccupancyTree, level: int, ii: np.ndarray, jj: np.ndarray,
                     cloud: PointCloud) -> np.ndarray:
    """Cells the scan saw free in full, so a coarse cell never clears hidden material."""
    if ii.size == 0 or cloud.angles.size == 0:
        return np.zeros(ii.size, dtype=bool)
    theta0 = float(cloud.angles[0])
    rel = np.mod(cloud.angles - theta0, 2.0 * math.pi)
    order = np.argsort(rel, kind="stable")
    return cells_seen_free(ii.astype(np.int64), jj.astype(np.int64), tree.precision(level),
                           float(tree.origin[0]), float(tree.origin[1]),
                           float(cloud.origin[0]), float(cloud.origin[1]), theta0,
                           np.ascontiguousarray(rel[order]), np.ascontiguousarray(cloud.ranges[order], dtype=float),
                           float(cloud.ray_angle))


def integrate(tree: OccupancyTree, cloud: PointCloud, budget: InsertionBudget,
              reference_trajectory: np.ndarray | None = None) -> IntegrationResult:
    """Ray-trace the cloud into ``tree`` under a precision and volume budget.

    Rays are processed in ascending distance of their endpoint to the
    reference trajectory (the drone position when there is none).  Cells are
    stepped at ``p0``; integration stops before the newly touched volume
    would exceed ``v0``.
    """
    level = tree.level_of(budget.p0)
    col = tree.column_volume(level)
    max_cells = int(math.floor(budget.v0 / col + 1e-9)) if math.isfinite(budget.v0) else np.iinfo(np.int64).max
    empty = IntegrationResult(0.0, 0, 0, 0.0, 0)
    hits = cloud.points[:, :2]
    frees = cloud.free_endpoints[:, :2]
    ends = np.vstack([hits, frees])
    if max_cells <= 0 or len(ends) == 0:
        return empty
    is_hit = np.zeros(len(ends), dtype=bool)
    is_hit[:len(hits)] = True
    origin = cloud.origin[:2]

    ref = origin[None] if reference_trajectory is None or len(reference_trajectory) == 0 \
        else np.asarray(reference_trajectory, dtype=float)[:, :2]
    order = np.argsort(distance_to_polyline(ends, ref), kind="stable")
    ends, is_hit = ends[order], is_hit[order]

    p = tree.precision(level)
    nx, ny = tree.shapes[level]
    lo = np.floor((np.minimum(ends.min(axis=0), origin) - tree.origin) / p).astype(np.int64) - 1
    hi = np.floor((np.maximum(ends.max(axis=0), origin) - tree.origin) / p).astype(np.int64) + 2
    flags, cells, rays, steps = walk_rays(
        float(origin[0]), float(origin[1]), np.ascontiguousarray(ends), is_hit, float(budget.p0),
        float(tree.origin[0]), float(tree.origin[1]), p, nx, ny,
        int(lo[0]), int(lo[1]), int(hi[0] - lo[0]), int(hi[1] - lo[1]), int(max_cells))
    fi, fj = np.nonzero(flags & 2)
    oi, oj = np.nonzero(flags & 4)
    fi, fj = fi + lo[0], fj + lo[1]
    # cells already Free all the way down gain nothing from a rewrite
    fresh = (tree.min_state[level][fi, fj] < FREE) | (tree.state[level][fi, fj] == OCCUPIED)
    fi, fj = fi[fresh], fj[fresh]
    keep = _cells_seen_free(tree, level, fi, fj, cloud)
    tree.write(level, fi[keep], fj[keep], FREE)
    tree.write(level, oi + lo[0], oj + lo[1], OCCUPIED)

    return IntegrationResult(volume=cells * col, cells=cells, voxels=cells * tree.voxels_per_column(level),
                             swept_volume=steps * col, rays=rays)


def write_tree_csv(tree: OccupancyTree, path: str | Path) -> None:
    names = {UNKNOWN: "unknown", FREE: "free", OCCUPIED: "occupied"}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "size", "state"])
        for x, y, z, size, st in tree.leaves():
            w.writerow([f"{x:.6f}", f"{y:.6f}", f"{z:.6f}", f"{size:.6f}", names[st]])


def write_cloud_csv(cloud: PointCloud, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        for p in cloud.points:
            w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])
