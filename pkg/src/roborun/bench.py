"""Stage calibration, suite orchestration, metric aggregation and SVG reports."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import LatencyScaling, Physics, precision_ladder
from .governor import LatencyModel, calibrate
from .mapping import InsertionBudget, OccupancyTree, downsample_cloud, integrate, sense
from .planning import NoPath, PlanBudget, handoff, plan
from .runtime import MissionConfig, RuntimeMode, run_mission
from .vehicle import clearance_to_pillars
from .world import EnvSpec, GroundTruth, generate_environment, suite_27

MODEL_FILE = "latency_model.txt"

# Latency scaling the shipped model was tuned with: baseline decisions charge
# several seconds of compute, as the full-scale stack does on flight hardware.
DEFAULT_SCALING = LatencyScaling(compute_scale=500.0, overhead_scale=4.0)


class ModelMissing(FileNotFoundError):
    pass


def default_model_path() -> Path:
    return Path(str(resources.files("roborun") / "data" / MODEL_FILE))


def load_model(path: str | Path | None = None) -> LatencyModel:
    p = Path(path) if path is not None else default_model_path()
    if not p.is_file():
        raise ModelMissing(f"latency model {p} not found; run `roborun calibrate --out {p}` first")
    return LatencyModel.load(p)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationScene:
    """A mid-difficulty world with a scan, a pre-mapped tree and per-precision views."""

    physics: Physics
    gt: GroundTruth
    pose: np.ndarray
    heading: np.ndarray
    tree: OccupancyTree
    views: dict = field(default_factory=dict)

    @classmethod
    def build(cls, scale: float = 0.1, seed: int = 7) -> "CalibrationScene":
        ph = Physics(scale)
        gt = generate_environment(EnvSpec.reference(scale, seed=seed))
        alt = ph.altitude
        pose = np.array([gt.start.x, gt.start.y, alt])
        heading = np.array([1.0, 0.0, 0.0])
        tree = OccupancyTree.for_world(gt, ph)
        # map a lattice of poses around the start, enough to serve the largest hand-off volume
        b = gt.bounds
        step = 0.75 * ph.sensor_range
        reach = 20.0 * ph.sensor_range
        for x in np.arange(max(b.xmin, -reach), min(b.xmax, reach), step):
            for y in np.arange(b.ymin + step, b.ymax, step):
                if clearance_to_pillars(gt, (x, y)) > ph.body_radius:
                    integrate(tree, sense(gt, np.array([x, y, alt]), heading, ph),
                              InsertionBudget(ph.vox_min, math.inf))
        return cls(ph, gt, pose, heading, tree)

    def view(self, p: float):
        if p not in self.views:
            self.views[p] = handoff(self.tree, p, math.inf, self.pose)
        return self.views[p]


def stage_executors(scene: CalibrationScene) -> list[Callable[[float, float], tuple[float, float]]]:
    """Executors f(p_ref, v_ref) -> (seconds, processed reference volume).

    Knobs arrive in full-scale units and are mapped into the desk scene; the
    timer brackets only the stage call itself.
    """
    ph = scene.physics
    s = ph.scale
    s3 = s ** 3
    cloud = sense(scene.gt, scene.pose, scene.heading, ph)
    pad = ph.sensor_range + 2.0 * ph.p_max
    x0, y0 = scene.pose[0] - pad, scene.pose[1] - pad
    goal = np.array([scene.gt.goal.x, scene.gt.goal.y, ph.altitude])

    def perception(p_ref: float, v_ref: float) -> tuple[float, float]:
        tree = OccupancyTree(x0, y0, x0 + 2 * pad, y0 + 2 * pad, ph.vox_min, ph.levels)
        p, v = p_ref * s, v_ref * s3
        t0 = time.perf_counter()
        res = integrate(tree, downsample_cloud(cloud, p), InsertionBudget(p, v))
        dt = time.perf_counter() - t0
        return dt, res.volume / s3

    def hand_off(p_ref: float, v_ref: float) -> tuple[float, float]:
        p, v = p_ref * s, v_ref * s3
        t0 = time.perf_counter()
        view = handoff(scene.tree, p, v, scene.pose)
        dt = time.perf_counter() - t0
        return dt, view.volume / s3

    def planning(p_ref: float, v_ref: float) -> tuple[float, float]:
        p, v = p_ref * s, v_ref * s3
        view = scene.view(p)
        t0 = time.perf_counter()
        try:
            vol = plan(view, scene.pose, goal, PlanBudget(p, v), rng_seed=11, clearance=ph.body_radius,
                       window_radius=1.5 * ph.sensor_range, goal_tolerance=scene.gt.grid_size).explored_volume
        except NoPath as exc:
            vol = exc.explored_volume
        dt = time.perf_counter() - t0
        return dt, vol / s3

    return [perception, hand_off, planning]


def knob_grids(levels: int = 6) -> list[list[tuple[float, float]]]:
    """Reference-unit (p, v) cells per stage: the precision ladder times volume levels."""
    ladder = precision_ladder(levels=levels)
    v_perc = (4_000.0, 8_000.0, 16_000.0, 32_000.0, 60_000.0)
    v_plan = (30_000.0, 100_000.0, 300_000.0, 1_000_000.0)
    return [[(p, v) for p in ladder for v in vols] for vols in (v_perc, v_plan, v_plan)]


def run_calibration(scale: float = 0.1, reps: int = 5, model_path: str | Path | None = None,
                    csv_path: str | Path | None = None, enforce: bool = True) -> LatencyModel:
    scene = CalibrationScene.build(scale)
    execs = stage_executors(scene)
    grids = knob_grids(scene.physics.levels)
    # compile and warm every kernel before anything is timed
    for f, g in zip(execs, grids):
        for cell in g:
            f(*cell)
    return calibrate(execs, grids, reps=reps, model_path=model_path, csv_path=csv_path, enforce=enforce)


# ---------------------------------------------------------------------------
# suite


MODES = ("baseline", "roborun")
KNOBS = ("density", "spread", "goal_distance")
# index of the mid-difficulty environment (middle density, spread and goal distance)
MID_ENV = 13


@dataclass(frozen=True)
class SuiteConfig:
    scale: float = 0.1
    seeds_per_env: int = 5
    modes: tuple[str, ...] = MODES
    latency_source: str = "modeled"
    output_dir: Path = Path("suite_out")
    parallelism: int = 1
    model_path: Path | None = None
    scaling: LatencyScaling = DEFAULT_SCALING
    base_seed: int = 0
    env_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.seeds_per_env < 1:
            raise ValueError("seeds_per_env must be at least 1")
        if not 0.0 < self.scale <= 1.0:
            raise ValueError("scale must lie in (0, 1]")
        bad = set(self.modes) - set(MODES)
        if bad or not self.modes:
            raise ValueError(f"modes must be a non-empty subset of {MODES}, got {self.modes}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")

    def mission_config(self) -> MissionConfig:
        return MissionConfig(physics=Physics(self.scale), scaling=self.scaling)


@dataclass(frozen=True)
class Task:
    env_id: int
    seed: int
    mode: str
    spec: EnvSpec

    @property
    def name(self) -> str:
        return f"env{self.env_id:02d}_s{self.seed}_{self.mode}"


def suite_tasks(cfg: SuiteConfig) -> list[Task]:
    base = EnvSpec.reference(cfg.scale)
    tasks = []
    for k in range(cfg.seeds_per_env):
        specs = suite_27(base, cfg.base_seed + k)
        for i, spec in enumerate(specs):
            if cfg.env_ids is not None and i not in cfg.env_ids:
                continue
            for mode in cfg.modes:
                tasks.append(Task(i, k, mode, spec))
    return tasks


def _run_task(args) -> tuple[str, str | None]:
    task, model_path, mcfg, latency, log_dir = args
    try:
        model = load_model(model_path)
        gt = generate_environment(task.spec)
        log = run_mission(gt, RuntimeMode.parse(task.mode, latency), model, task.seed, mcfg)
        log.write_csv(Path(log_dir) / f"{task.name}.csv")
        return task.name, None
    except Exception as exc:  # any mission failure is recorded, never fatal to the suite
        return task.name, f"{type(exc).__name__}: {exc}"


ENV_COLUMNS = ("env", "seed", "density", "spread", "goal_distance", "world_seed")


def write_env_table(tasks: Sequence[Task], path: Path) -> None:
    seen = {}
    for t in tasks:
        seen.setdefault((t.env_id, t.seed), t.spec)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENV_COLUMNS)
        for (i, k), spec in sorted(seen.items()):
            w.writerow([i, k, f"{spec.density:.6f}", f"{spec.spread:.6f}", f"{spec.goal_distance:.6f}", spec.seed])


def run_suite(cfg: SuiteConfig, progress: Callable[[str], None] | None = None) -> "SuiteReport":
    """Run every (env, mode, seed) mission, then aggregate the stored logs."""
    load_model(cfg.model_path)   # fail early with the calibration hint
    out = Path(cfg.output_dir)
    log_dir = out / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    tasks = suite_tasks(cfg)
    write_env_table(tasks, out / "envs.csv")
    plan_rows = [(t.env_id, t.seed, t.mode) for t in tasks]
    with open(out / "plan.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("env", "seed", "mode"))
        w.writerows(plan_rows)
    mcfg = cfg.mission_config()
    args = [(t, cfg.model_path, mcfg, cfg.latency_source, str(log_dir)) for t in tasks]
    failures = {}
    if cfg.parallelism == 1:
        results = map(_run_task, args)
    else:
        pool = ProcessPoolExecutor(max_workers=cfg.parallelism)
        results = pool.map(_run_task, args, chunksize=1)
    try:
        for n, (name, err) in enumerate(results, 1):
            if err is not None:
                failures[name] = err
            if progress is not None:
                progress(f"[{n}/{len(args)}] {name}" + (f" FAILED {err}" if err else ""))
    finally:
        if cfg.parallelism != 1:
            pool.shutdown()
    with open(out / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mission", "error"))
        for name in sorted(failures):
            w.writerow((name, failures[name]))
    report = build_report(out)
    report.write(out)
    return report


# ---------------------------------------------------------------------------
# aggregation


MISSION_COLUMNS = (
    "env", "seed", "mode", "density", "spread", "goal_distance", "status", "flight_time", "distance",
    "avg_velocity", "energy", "collided", "timed_out", "reached_goal", "decisions", "replans", "compute_sum",
    "latency_sum", "feasible_decisions", "violations", "static_violations", "degraded",
)


def read_log(path: str | Path) -> tuple[list[dict], dict]:
    """Decision rows and the footer of a stored mission log."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    recs = [dict(zip(header, r)) for r in rows[1:] if r and r[0] != "footer"]
    foot = [r for r in rows if r and r[0] == "footer"]
    footer = dict(zip(foot[0][1:], foot[1][1:]))
    return recs, footer


def mission_row(path: str | Path, env: dict, mode: str) -> dict:
    recs, foot = read_log(path)
    lat = np.array([float(r["latency"]) for r in recs])
    dl = np.array([float(r["deadline"]) for r in recs])
    comp = np.array([float(r["delta0"]) + float(r["delta1"]) + float(r["delta2"]) for r in recs])
    feas = np.array([r["feasible"] == "1" and r["degraded"] == "0" for r in recs], dtype=bool)
    over = lat > dl
    collided, timed_out = foot["collided"] == "1", foot["timed_out"] == "1"
    return {
        "env": env["env"], "seed": env["seed"], "mode": mode, "density": env["density"],
        "spread": env["spread"], "goal_distance": env["goal_distance"], "status": "ok",
        "flight_time": float(foot["flight_time_s"]), "distance": float(foot["distance_m"]),
        "avg_velocity": float(foot["avg_velocity"]), "energy": float(foot["energy_J"]),
        "collided": int(collided), "timed_out": int(timed_out), "reached_goal": int(not (collided or timed_out)),
        "decisions": int(foot["decisions"]), "replans": int(foot["replans"]),
        "compute_sum": float(comp.sum()), "latency_sum": float(lat.sum()),
        "feasible_decisions": int(feas.sum()),
        "violations": int(np.sum(feas & over)) if mode == "roborun" else 0,
        "static_violations": int(np.sum(over)) if mode == "baseline" else 0,
        "degraded": int(sum(r["degraded"] == "1" for r in recs)),
    }


@dataclass
class SuiteReport:
    missions: list[dict]

    # mission subsets ------------------------------------------------------
    def ok(self, mode: str | None = None, **where) -> list[dict]:
        out = [m for m in self.missions if m["status"] == "ok" and (mode is None or m["mode"] == mode)]
        for k, v in where.items():
            out = [m for m in out if m[k] == v]
        return out

    def timed(self, mode: str, **where) -> list[dict]:
        """Missions whose flight time measures the mission: collisions cut a flight short."""
        return [m for m in self.ok(mode, **where) if not m["collided"]]

    @property
    def modes(self) -> list[str]:
        return [m for m in MODES if any(r["mode"] == m for r in self.missions)]

    @property
    def failed(self) -> list[dict]:
        return [m for m in self.missions if m["status"] != "ok"]

    # metrics -----------------------------------------------------------------
    def aggregate(self, mode: str, **where) -> dict:
        every = [m for m in self.missions if m["mode"] == mode
                 and all(m[k] == v for k, v in where.items())]
        ok = self.ok(mode, **where)
        timed = self.timed(mode, **where)
        n_dec = sum(m["decisions"] for m in ok)

        def mean(key, rows):
            return float(np.mean([m[key] for m in rows])) if rows else math.nan

        return {
            "missions": len(every), "failed": len(every) - len(ok), "reached": sum(m["reached_goal"] for m in ok),
            "collision_rate": mean("collided", ok), "timeout_rate": mean("timed_out", ok),
            "mean_time": mean("flight_time", timed), "mean_velocity": mean("avg_velocity", timed),
            "mean_energy": mean("energy", timed),
            "mean_latency": sum(m["latency_sum"] for m in ok) / n_dec if n_dec else math.nan,
            "mean_compute": sum(m["compute_sum"] for m in ok) / n_dec if n_dec else math.nan,
            "feasible_decisions": sum(m["feasible_decisions"] for m in ok),
            "violations": sum(m["violations"] for m in ok),
            "static_violations": sum(m["static_violations"] for m in ok),
        }

    def ratio(self, key: str) -> float:
        """RoboRun over Baseline for an aggregate metric."""
        return self.aggregate("roborun")[key] / self.aggregate("baseline")[key]

    # output -------------------------------------------------------------------
    REPORT_COLUMNS = ("scope", "env", "density", "spread", "goal_distance", "mode", "missions", "failed", "reached",
                      "collision_rate", "timeout_rate", "mean_time", "mean_velocity", "mean_energy",
                      "mean_latency", "mean_compute", "feasible_decisions", "violations", "static_violations")

    def report_rows(self) -> list[list[str]]:
        rows = []
        envs = sorted({(m["env"], m["density"], m["spread"], m["goal_distance"]) for m in self.missions},
                      key=lambda e: int(e[0]))
        # the same env id carries different worlds per seed but identical knob levels
        seen = set()
        for env, d, s, g in envs:
            if env in seen:
                continue
            seen.add(env)
            for mode in self.modes:
                rows.append(["env", env, d, s, g, mode, *_fmt(self.aggregate(mode, env=env))])
        for mode in self.modes:
            rows.append(["all", "", "", "", "", mode, *_fmt(self.aggregate(mode))])
        return rows

    def write(self, out: str | Path) -> None:
        out = Path(out)
        _write_csv(out / "missions.csv", MISSION_COLUMNS,
                   [[_cell(m[c]) for c in MISSION_COLUMNS] for m in self.missions])
        _write_csv(out / "report.csv", self.REPORT_COLUMNS, self.report_rows())
        sens = []
        for knob in KNOBS:
            series, ratios = sensitivity(self, knob)
            for mode in self.modes:
                for level, t in series[mode]:
                    sens.append([knob, mode, f"{level:.6f}", f"{t:.6f}", ""])
                sens.append([knob, mode, "", "", f"{ratios[mode]:.6f}"])
        _write_csv(out / "sensitivity.csv", ("knob", "mode", "level", "mean_time", "worst_ratio"), sens)
        write_plots(self, out)


def _cell(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def _fmt(agg: dict) -> list[str]:
    return [_cell(agg[k]) for k in SuiteReport.REPORT_COLUMNS[6:]]


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def build_report(out: str | Path) -> SuiteReport:
    """Aggregate a suite directory from its stored CSVs alone."""
    out = Path(out)
    with open(out / "envs.csv", newline="") as fh:
        envs = {(r["env"], r["seed"]): r for r in csv.DictReader(fh)}
    with open(out / "plan.csv", newline="") as fh:
        planned = [(r["env"], r["seed"], r["mode"]) for r in csv.DictReader(fh)]
    errors = {}
    if (out / "failures.csv").is_file():
        with open(out / "failures.csv", newline="") as fh:
            errors = {r["mission"]: r["error"] for r in csv.DictReader(fh)}
    missions = []
    for env, seed, mode in planned:
        meta = envs[(env, seed)]
        name = f"env{int(env):02d}_s{seed}_{mode}"
        path = out / "logs" / f"{name}.csv"
        if path.is_file() and name not in errors:
            missions.append(mission_row(path, meta, mode))
        else:
            row = {c: 0 for c in MISSION_COLUMNS}
            row.update(env=env, seed=seed, mode=mode, density=meta["density"], spread=meta["spread"],
                       goal_distance=meta["goal_distance"], status="failed")
            missions.append(row)
    return SuiteReport(missions)


def sensitivity(report: SuiteReport, knob: str) -> tuple[dict, dict]:
    """Mean mission time per knob level and the worst-case max/min ratio, per mode."""
    if knob not in KNOBS:
        raise ValueError(f"knob must be one of {KNOBS}")
    series, ratios = {}, {}
    for mode in report.modes:
        levels = sorted({float(m[knob]) for m in report.timed(mode)})
        pts = []
        for lv in levels:
            times = [m["flight_time"] for m in report.timed(mode) if float(m[knob]) == lv]
            pts.append((lv, float(np.mean(times))))
        series[mode] = pts
        vals = [t for _, t in pts]
        ratios[mode] = max(vals) / min(vals) if len(vals) > 1 and min(vals) > 0 else 1.0
    return series, ratios


def cpu_proxy(report: SuiteReport) -> float:
    """Percent reduction of mean modeled compute per decision, RoboRun against Baseline."""
    base = report.aggregate("baseline")["mean_compute"]
    rr = report.aggregate("roborun")["mean_compute"]
    if base == 0:
        return 0.0
    return 100.0 * (1.0 - rr / base)


def check_report(report: SuiteReport) -> list[tuple[str, bool, str]]:
    """Suite-level acceptance checks as (name, passed, detail)."""
    rr, base = report.aggregate("roborun"), report.aggregate("baseline")
    t_ratio = rr["mean_time"] / base["mean_time"]
    v_ratio = rr["mean_velocity"] / base["mean_velocity"]
    e_ratio = rr["mean_energy"] / base["mean_energy"]
    _, dens = sensitivity(report, "density")
    _, goal = sensitivity(report, "goal_distance")
    cpu = cpu_proxy(report)
    out = [
        ("no failed missions", not report.failed, f"{len(report.failed)} failed"),
        ("deadline safety", rr["violations"] == 0,
         f"{rr['violations']} violations over {rr['feasible_decisions']} solver-feasible decisions"),
        ("mission time ratio <= 0.5", t_ratio <= 0.5, f"ratio {t_ratio:.3f}"),
        ("velocity ratio >= 2", v_ratio >= 2.0, f"ratio {v_ratio:.3f}"),
        ("energy ratio tracks time ratio", abs(e_ratio / t_ratio - 1.0) <= 0.01,
         f"energy {e_ratio:.4f} time {t_ratio:.4f}"),
    ]
    for mode in report.modes:
        agg = report.aggregate(mode)
        out.append((f"collision-free rate {mode} >= 0.8", 1.0 - agg["collision_rate"] >= 0.8,
                    f"{1.0 - agg['collision_rate']:.3f}"))
    out += [
        ("density sensitivity roborun > baseline", dens["roborun"] > dens["baseline"],
         f"roborun {dens['roborun']:.3f} baseline {dens['baseline']:.3f}"),
        ("goal-distance sensitivity baseline > roborun", goal["baseline"] > goal["roborun"],
         f"baseline {goal['baseline']:.3f} roborun {goal['roborun']:.3f}"),
        ("cpu proxy reduction > 0", cpu > 0.0, f"{cpu:.1f}%"),
    ]
    return out


# ---------------------------------------------------------------------------
# plots


def _figure_setup():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "roborun"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def representative_log(report: SuiteReport, out: Path) -> Path | None:
    """The median-mission-time RoboRun run of the mid-difficulty environment."""
    runs = sorted(report.timed("roborun", env=str(MID_ENV)), key=lambda m: (m["flight_time"], int(m["seed"])))
    if not runs:
        return None
    m = runs[(len(runs) - 1) // 2]
    return out / "logs" / f"env{MID_ENV:02d}_s{m['seed']}_roborun.csv"


def write_plots(report: SuiteReport, out: str | Path) -> None:
    plt = _figure_setup()
    out = Path(out)
    modes = report.modes
    colors = {"baseline": "tab:gray", "roborun": "tab:blue"}

    fig, axes = plt.subplots(1, 4, figsize=(12, 3))
    metrics = (("mean_time", "mission time (s)"), ("mean_velocity", "velocity (m/s)"),
               ("mean_energy", "energy (J)"), ("collision_rate", "collision rate"))
    for ax, (key, label) in zip(axes, metrics):
        vals = [report.aggregate(m)[key] for m in modes]
        ax.bar(modes, vals, color=[colors[m] for m in modes])
        ax.set_title(label, fontsize=9)
    fig.tight_layout()
    _save(fig, out / "metrics.svg")
    plt.close(fig)

    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, knob in zip(axes, KNOBS):
        series, ratios = sensitivity(report, knob)
        for mode in modes:
            if series[mode]:
                x, y = zip(*series[mode])
                ax.plot(x, y, "o-", color=colors[mode], label=f"{mode} ({ratios[mode]:.2f}x)")
        ax.set_xlabel(knob.replace("_", " "))
        ax.set_ylabel("mission time (s)")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out / "sensitivity.svg")
    plt.close(fig)

    path = representative_log(report, out)
    if path is None or not path.is_file():
        return
    recs, _ = read_log(path)
    parts = (("delta0", "perception"), ("delta1", "hand-off"), ("delta2", "planning"),
             ("point_cloud", "point cloud"), ("overhead", "runtime"))
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(10, 6))
    idx = np.arange(len(recs))
    bottom = np.zeros(len(recs))
    for key, label in parts:
        vals = np.array([float(r[key]) for r in recs])
        ax0.bar(idx, vals, bottom=bottom, width=1.0, label=label)
        bottom += vals
    ax0.plot(idx, [float(r["deadline"]) for r in recs], "k-", lw=0.6, label="deadline")
    ax0.set_xlabel("decision")
    ax0.set_ylabel("latency (s)")
    ax0.set_ylim(0, max(bottom.max() if len(recs) else 1.0, 1e-9) * 2.0)
    ax0.legend(fontsize=7, ncol=6)
    x = np.array([float(r["snap_x"]) for r in recs])
    y = np.array([float(r["snap_y"]) for r in recs])
    ax1.hist2d(x, y, bins=(60, 12), cmap="viridis")
    ax1.set_xlabel("x (m)")
    ax1.set_ylabel("y (m)")
    ax1.set_title("decision positions", fontsize=9)
    fig.tight_layout()
    _save(fig, out / "breakdown.svg")
    plt.close(fig)
