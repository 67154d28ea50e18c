"""Scale-aware physical parameters shared by every module.

All reference values are full-scale (meters, m/s, m^3).  A desk-scale run
applies a geometric similarity with factor ``scale``: lengths scale by s,
speeds and accelerations by s, volumes by s^3, and times are unchanged.
Under that transform a mission at scale s is the full-scale mission seen
through a smaller ruler, so every ratio the benchmark reports is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

# Stopping-distance polynomial (magnitude form), full-scale units.
STOP_COEFFS = (0.055, 0.36, 0.20)

PRECISION_LEVELS = 6
VOX_MIN_REF = 0.3

# Knob table, full-scale units.
BASELINE_V0_REF = 46_000.0
BASELINE_V1_REF = 150_000.0
BASELINE_V2_REF = 150_000.0
V0_CAP_REF = 60_000.0
V1_CAP_REF = 1_000_000.0
V2_CAP_REF = 1_000_000.0
BASELINE_VMAX_REF = 0.5
ROBORUN_VMAX_REF = 6.0

POINT_CLOUD_OVERHEAD_S = 0.210
RUNTIME_RESERVE_S = 0.050
HOVER_SPEED_REF = 0.1


def precision_ladder(vox_min: float = VOX_MIN_REF, levels: int = PRECISION_LEVELS) -> tuple[float, ...]:
    """Admissible voxel sizes vox_min * 2**n for n = 0 .. levels-1."""
    return tuple(vox_min * (2 ** n) for n in range(levels))


@dataclass(frozen=True)
class Physics:
    """Drone, sensor and map geometry at a given similarity scale."""

    scale: float = 0.1
    sensor_range_ref: float = 20.0
    body_radius_ref: float = 0.6
    ray_step_deg: float = 0.75
    frusta_deg: tuple[tuple[float, float], ...] = ((0.0, 90.0), (90.0, 90.0), (180.0, 90.0), (270.0, 90.0))
    levels: int = PRECISION_LEVELS

    def __post_init__(self):
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")

    # lengths
    @property
    def vox_min(self) -> float:
        return VOX_MIN_REF * self.scale

    @property
    def ladder(self) -> tuple[float, ...]:
        return precision_ladder(self.vox_min, self.levels)

    @property
    def p_max(self) -> float:
        return self.ladder[-1]

    @property
    def band_height(self) -> float:
        # one coarsest cube tall, so every level tiles the band exactly
        return self.p_max

    @property
    def altitude(self) -> float:
        return 0.5 * self.band_height

    @property
    def sensor_range(self) -> float:
        return self.sensor_range_ref * self.scale

    @property
    def body_radius(self) -> float:
        return self.body_radius_ref * self.scale

    # dynamics
    @property
    def a_max(self) -> float:
        # braking at this rate covers v^2/(2a) = 0.055 v^2, the quadratic term of d_stop
        return self.scale / (2.0 * STOP_COEFFS[0])

    @property
    def hover_speed(self) -> float:
        return HOVER_SPEED_REF * self.scale

    def length(self, ref: float) -> float:
        return ref * self.scale

    def volume(self, ref: float) -> float:
        return ref * self.scale ** 3

    def speed(self, ref: float) -> float:
        return ref * self.scale

    def to_ref_precision(self, p: float) -> float:
        return p / self.scale

    def to_ref_volume(self, v: float) -> float:
        return v / self.scale ** 3


@dataclass(frozen=True)
class LatencyScaling:
    """Converts calibrated desk latencies into charged decision latency.

    ``compute_scale`` multiplies fitted stage latencies; ``overhead_scale``
    multiplies the fixed point-cloud and runtime overheads.
    """

    compute_scale: float = 1.0
    overhead_scale: float = 1.0
    point_cloud_s: float = POINT_CLOUD_OVERHEAD_S
    reserve_s: float = RUNTIME_RESERVE_S

    @property
    def point_cloud(self) -> float:
        return self.point_cloud_s * self.overhead_scale

    @property
    def reserve(self) -> float:
        return self.reserve_s * self.overhead_scale


@dataclass(frozen=True)
class PlannerSettings:
    goal_bias: float = 0.05
    steer_factor: float = 4.0
    gamma: float = 2.0
    max_samples: int = 150
    window_factor: float = 1.5
    waypoint_spacing_ref: float = 1.0
