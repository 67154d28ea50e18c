"""Ground-truth pillar fields and the procedural environment generator.

Worlds are z-invariant: every obstacle is a vertical cylinder standing on
a regular grid of cells.  Two clusters (zones A and C) are centred on the
start and the goal and thin out with a Gaussian fall-off; the stretch in
between (zone B) is open.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DENSITIES = (0.3, 0.45, 0.6)
SPREADS_REF = (40.0, 80.0, 120.0)
GOAL_DISTANCES_REF = (600.0, 900.0, 1200.0)
GRID_REF = 10.0
GAP_REF = 6.0


class Vec3(NamedTuple):
    x: float
    y: float
    z: float = 0.0

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Box:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    zmin: float = 0.0
    zmax: float = 30.0

    def contains(self, p: Sequence[float]) -> bool:
        return (self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax
                and self.zmin <= p[2] <= self.zmax)


@dataclass(frozen=True)
class Obstacle:
    center: Vec3
    radius: float
    height: float


@dataclass(frozen=True)
class EnvSpec:
    """Generator knobs, in the (possibly desk-scaled) units of the run."""

    density: float = 0.45
    spread: float = 80.0
    goal_distance: float = 900.0
    grid_size: float = GRID_REF
    gap_size: float = GAP_REF
    seed: int = 0
    scale: float = 1.0
    centroids: tuple[Vec3, ...] | None = None
    arena: Box | None = None

    @classmethod
    def reference(cls, scale: float = 0.1, **overrides) -> "EnvSpec":
        """Mid-difficulty environment with every length multiplied by ``scale``."""
        base = cls(density=0.45, spread=80.0 * scale, goal_distance=900.0 * scale,
                   grid_size=GRID_REF * scale, gap_size=GAP_REF * scale, scale=scale)
        return replace(base, **overrides)

    @property
    def start(self) -> Vec3:
        return Vec3(0.0, 0.0, 0.0)

    @property
    def goal(self) -> Vec3:
        # goal snaps to a cell centre so the protected platform is a whole cell
        n = round(self.goal_distance / self.grid_size)
        return Vec3(n * self.grid_size, 0.0, 0.0)

    @property
    def centroid_list(self) -> tuple[Vec3, ...]:
        if self.centroids is not None:
            return tuple(self.centroids)
        return (self.start, self.goal)

    @property
    def bounds(self) -> Box:
        if self.arena is not None:
            return self.arena
        pad = self.spread + 2.0 * self.grid_size
        return Box(-pad, self.goal.x + pad, -pad, pad, 0.0, 3.0 * GRID_REF * self.scale)

    @property
    def pillar_radius(self) -> float:
        # adjacent pillars then leave exactly gap_size of free space between them
        return 0.5 * (self.grid_size - self.gap_size)

    def validate(self) -> None:
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density must lie in [0, 1], got {self.density}")
        if self.spread <= 0 or self.goal_distance <= 0 or self.grid_size <= 0:
            raise ValueError("spread, goal_distance and grid_size must be positive")
        if not 0.0 < self.gap_size < self.grid_size:
            raise ValueError("gap_size must lie strictly between 0 and grid_size")
        box = self.bounds
        for c in self.centroid_list:
            if not (box.xmin <= c.x - self.spread and c.x + self.spread <= box.xmax
                    and box.ymin <= c.y - self.spread and c.y + self.spread <= box.ymax):
                raise ValueError("spread around a centroid exceeds the arena bounds")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    obstacles: tuple[Obstacle, ...]
    start: Vec3
    goal: Vec3
    zone_boundaries: tuple[float, float]
    spec: EnvSpec
    cell_occupied: np.ndarray = field(repr=False)
    cell_origin: tuple[int, int] = (0, 0)
    centers: np.ndarray = field(repr=False, default=None)
    radii: np.ndarray = field(repr=False, default=None)
    cell_index: np.ndarray = field(repr=False, default=None)

    @property
    def bounds(self) -> Box:
        return self.spec.bounds

    @property
    def grid_size(self) -> float:
        return self.spec.grid_size

    def zone(self, x: float) -> str:
        a, c = self.zone_boundaries
        if x <= a:
            return "A"
        if x >= c:
            return "C"
        return "B"

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        g = self.spec.grid_size
        return int(math.floor(x / g + 0.5)), int(math.floor(y / g + 0.5))

    def nearby(self, x: float, y: float, radius: float) -> np.ndarray:
        """Indices of obstacles whose cell lies within ``radius`` of (x, y)."""
        if self.cell_index.size == 0:
            return np.empty(0, dtype=int)
        g = self.spec.grid_size
        r = radius + g
        i0, j0 = self.cell_origin
        ni, nj = self.cell_index.shape
        ia = max(int(math.floor((x - r) / g + 0.5)) - i0, 0)
        ib = min(int(math.floor((x + r) / g + 0.5)) - i0 + 1, ni)
        ja = max(int(math.floor((y - r) / g + 0.5)) - j0, 0)
        jb = min(int(math.floor((y + r) / g + 0.5)) - j0 + 1, nj)
        if ia >= ib or ja >= jb:
            return np.empty(0, dtype=int)
        block = self.cell_index[ia:ib, ja:jb].ravel()
        return block[block >= 0]


def _cell_range(lo: float, hi: float, g: float) -> tuple[int, int]:
    return int(math.ceil(lo / g - 0.5)), int(math.floor(hi / g + 0.5))


def generate_environment(spec: EnvSpec) -> GroundTruth:
    """Sample a pillar field from ``spec``; a pure function of ``spec``."""
    spec.validate()
    g = spec.grid_size
    box = spec.bounds
    i_lo, i_hi = _cell_range(box.xmin + 0.5 * g, box.xmax - 0.5 * g, g)
    j_lo, j_hi = _cell_range(box.ymin + 0.5 * g, box.ymax - 0.5 * g, g)
    ii, jj = np.meshgrid(np.arange(i_lo, i_hi + 1), np.arange(j_lo, j_hi + 1), indexing="ij")
    cx, cy = ii * g, jj * g

    sigma = 0.5 * spec.spread
    prob = np.zeros(ii.shape)
    for c in spec.centroid_list:
        r2 = (cx - c.x) ** 2 + (cy - c.y) ** 2
        p = spec.density * np.exp(-r2 / (2.0 * sigma ** 2))
        p[r2 > spec.spread ** 2] = 0.0
        prob = np.maximum(prob, p)

    for platform in (spec.start, spec.goal):
        pi, pj = round(platform.x / g), round(platform.y / g)
        prob[(np.abs(ii - pi) <= 1) & (np.abs(jj - pj) <= 1)] = 0.0

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed & (2 ** 64 - 1)))
    occupied = rng.random(ii.shape) < prob

    radius = spec.pillar_radius
    height = box.zmax - box.zmin
    sel = np.argwhere(occupied)
    centers = np.column_stack([cx[occupied], cy[occupied]]).astype(float)
    cell_index = np.full(ii.shape, -1, dtype=np.int64)
    cell_index[sel[:, 0], sel[:, 1]] = np.arange(len(sel))
    obstacles = tuple(Obstacle(Vec3(float(x), float(y), box.zmin), radius, height) for x, y in centers)

    return GroundTruth(
        obstacles=obstacles,
        start=spec.start,
        goal=spec.goal,
        zone_boundaries=(spec.start.x + spec.spread, spec.goal.x - spec.spread),
        spec=spec,
        cell_occupied=occupied,
        cell_origin=(i_lo, j_lo),
        centers=centers.reshape(-1, 2),
        radii=np.full(len(centers), radius),
        cell_index=cell_index,
    )


def empty_world(spec: EnvSpec) -> GroundTruth:
    """The arena of ``spec`` with no obstacles at all."""
    return generate_environment(replace(spec, density=0.0))


def world_from_obstacles(spec: EnvSpec, centers: Sequence[Sequence[float]], radius: float) -> GroundTruth:
    """Hand-built world with pillars at arbitrary positions (tests, demos)."""
    base = empty_world(spec)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    occupied = np.zeros_like(base.cell_occupied)
    i0, j0 = base.cell_origin
    for x, y in centers:
        i, j = base.cell_of(x, y)
        if 0 <= i - i0 < occupied.shape[0] and 0 <= j - j0 < occupied.shape[1]:
            occupied[i - i0, j - j0] = True
    height = spec.bounds.zmax - spec.bounds.zmin
    obstacles = tuple(Obstacle(Vec3(float(x), float(y), 0.0), float(radius), height) for x, y in centers)
    # pillars may sit anywhere, so neighbour queries fall back to brute force
    return replace(base, obstacles=obstacles, cell_occupied=occupied, centers=centers,
                   radii=np.full(len(centers), float(radius)),
                   cell_index=np.empty((0, 0), dtype=np.int64))


def obstacles_near(gt: GroundTruth, x: float, y: float, radius: float) -> np.ndarray:
    """Indices of obstacles that may lie within ``radius`` of (x, y)."""
    if gt.cell_index.size == 0:
        if len(gt.centers) == 0:
            return np.empty(0, dtype=int)
        d = np.hypot(gt.centers[:, 0] - x, gt.centers[:, 1] - y) - gt.radii
        return np.flatnonzero(d <= radius)
    return gt.nearby(x, y, radius)


def measure_density(gt: GroundTruth, center: Sequence[float], window_cells: int) -> float:
    """Occupied-cell ratio in a window of ``window_cells`` x ``window_cells`` cells."""
    ci, cj = gt.cell_of(center[0], center[1])
    half = window_cells // 2
    i0, j0 = gt.cell_origin
    a, b = ci - half - i0, cj - half - j0
    ni, nj = gt.cell_occupied.shape
    if a < 0 or b < 0 or a + window_cells > ni or b + window_cells > nj:
        raise ValueError("density window does not fit inside the arena")
    block = gt.cell_occupied[a:a + window_cells, b:b + window_cells]
    return float(block.mean())


def min_surface_gap(gt: GroundTruth) -> float:
    """Smallest free distance between any two pillar surfaces (inf if < 2 pillars)."""
    if len(gt.centers) < 2:
        return math.inf
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(gt.centers).query(gt.centers, k=2)
    return float(np.min(dist[:, 1]) - 2.0 * gt.radii.max())


def suite_27(base: EnvSpec, seed: int) -> list[EnvSpec]:
    """Density x spread x goal-distance grid, each with a derived seed."""
    s = base.scale
    specs = []
    k = 0
    for density in DENSITIES:
        for spread in SPREADS_REF:
            for goal in GOAL_DISTANCES_REF:
                derived = int(np.random.SeedSequence([seed, k]).generate_state(1, dtype=np.uint64)[0])
                specs.append(replace(base, density=density, spread=spread * s,
                                     goal_distance=goal * s, seed=derived))
                k += 1
    return specs


_CONFIG_KEYS = ("density", "spread_m", "goal_distance_m", "grid_size_m", "gap_size_m", "seed", "scale")


def write_env_config(spec: EnvSpec, path: str | Path) -> None:
    values = (spec.density, spec.spread, spec.goal_distance, spec.grid_size, spec.gap_size, spec.seed, spec.scale)
    lines = [f"{k}={v!r}" for k, v in zip(_CONFIG_KEYS, values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_env_config(path: str | Path) -> EnvSpec:
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown environment keys: {sorted(unknown)}")
    scale = float(values.get("scale", 1.0))
    spec = EnvSpec.reference(scale)
    return replace(
        spec,
        density=float(values.get("density", spec.density)),
        spread=float(values.get("spread_m", spec.spread)),
        goal_distance=float(values.get("goal_distance_m", spec.goal_distance)),
        grid_size=float(values.get("grid_size_m", spec.grid_size)),
        gap_size=float(values.get("gap_size_m", spec.gap_size)),
        seed=int(values.get("seed", spec.seed)),
    )


def write_obstacles_csv(gt: GroundTruth, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cx", "cy", "cz", "r", "h"])
        for ob in gt.obstacles:
            w.writerow([f"{ob.center.x:.6f}", f"{ob.center.y:.6f}", f"{ob.center.z:.6f}",
                        f"{ob.radius:.6f}", f"{ob.height:.6f}"])
