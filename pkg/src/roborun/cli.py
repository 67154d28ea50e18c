"""Command-line entry point: gen, calibrate, run, suite, report."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (DEFAULT_SCALING, ModelMissing, SuiteConfig, build_report, check_report, cpu_proxy,
                    default_model_path, load_model, run_calibration, run_suite, sensitivity)
from .config import LatencyScaling, Physics
from .governor import CalibrationError
from .runtime import MissionConfig, RuntimeMode, run_mission
from .world import EnvSpec, generate_environment, read_env_config, suite_27, write_env_config, write_obstacles_csv

EXIT_OK, EXIT_INFRA, EXIT_CHECK = 0, 1, 2


def _scaling(args) -> LatencyScaling:
    return LatencyScaling(args.compute_scale, args.overhead_scale)


def _add_scaling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", type=Path, default=None, help="latency model file (default: shipped model)")
    p.add_argument("--compute-scale", type=float, default=DEFAULT_SCALING.compute_scale)
    p.add_argument("--overhead-scale", type=float, default=DEFAULT_SCALING.overhead_scale)


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    specs = suite_27(EnvSpec.reference(args.scale), args.seed)
    for i, spec in enumerate(specs):
        write_env_config(spec, out / f"env{i:02d}.cfg")
        write_obstacles_csv(generate_environment(spec), out / f"env{i:02d}_obstacles.csv")
    print(f"wrote {len(specs)} environments to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    out = Path(args.out) if args.out else default_model_path()
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        model = run_calibration(args.scale, args.reps, model_path=out, csv_path=args.csv)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_INFRA
    print(f"fit mse {model.fit_mse:.4f} (per stage {', '.join(f'{m:.4f}' for m in model.stage_mse)}) -> {out}")
    return EXIT_OK


def _env_spec(name: str, scale: float, seed: int) -> EnvSpec:
    if name == "mid":
        return EnvSpec.reference(scale, seed=seed)
    if name.isdigit():
        return suite_27(EnvSpec.reference(scale), seed)[int(name)]
    return read_env_config(name)


def cmd_run(args) -> int:
    try:
        model = load_model(args.model)
    except ModelMissing as exc:
        print(exc, file=sys.stderr)
        return EXIT_INFRA
    spec = _env_spec(args.env, args.scale, args.seed)
    cfg = MissionConfig(physics=Physics(spec.scale), scaling=_scaling(args))
    log = run_mission(generate_environment(spec), RuntimeMode.parse(args.mode, args.latency), model, args.seed, cfg)
    if args.out:
        log.write_csv(args.out)
    status = "collided" if log.collided else "timed out" if log.timed_out else "reached goal"
    print(f"{args.mode}: {status}, time {log.flight_time:.1f} s, distance {log.distance:.2f} m, "
          f"velocity {log.avg_velocity:.3f} m/s, energy {log.energy:.0f} J, decisions {log.decisions}")
    return EXIT_OK


def _summary(report) -> None:
    for mode in report.modes:
        a = report.aggregate(mode)
        print(f"{mode:9s} time {a['mean_time']:.1f} s  velocity {a['mean_velocity']:.3f} m/s  "
              f"energy {a['mean_energy']:.0f} J  collisions {a['collision_rate']:.2f}  "
              f"compute/decision {a['mean_compute']:.3f} s")
    if {"baseline", "roborun"} <= set(report.modes):
        print(f"cpu proxy reduction {cpu_proxy(report):.1f}%")
        for knob in ("density", "spread", "goal_distance"):
            _, r = sensitivity(report, knob)
            print(f"sensitivity {knob}: " + ", ".join(f"{m} {v:.2f}x" for m, v in r.items()))


def cmd_suite(args) -> int:
    cfg = SuiteConfig(scale=args.scale, seeds_per_env=args.seeds, modes=tuple(args.modes),
                      latency_source=args.latency, output_dir=Path(args.out), parallelism=args.jobs,
                      model_path=args.model, scaling=_scaling(args), base_seed=args.seed)
    try:
        report = run_suite(cfg, progress=print if args.verbose else None)
    except ModelMissing as exc:
        print(exc, file=sys.stderr)
        return EXIT_INFRA
    _summary(report)
    if report.failed:
        print(f"{len(report.failed)} missions failed, see {cfg.output_dir / 'failures.csv'}", file=sys.stderr)
        return EXIT_INFRA
    if args.check:
        results = check_report(report)
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not all(ok for _, ok, _ in results):
            return EXIT_CHECK
    return EXIT_OK


def cmd_report(args) -> int:
    report = build_report(args.out)
    report.write(args.out)
    _summary(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roborun", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="emit the 27 suite environments as config and obstacle CSVs")
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="envs")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("calibrate", help="fit the stage latency model on this machine")
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out", default=None, help="model file (default: the shipped model path)")
    p.add_argument("--csv", default=None, help="optional raw timing CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="fly a single mission")
    p.add_argument("--env", default="mid", help="'mid', a suite index 0-26, or an env config file")
    p.add_argument("--mode", choices=("baseline", "roborun"), default="roborun")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--latency", choices=("modeled", "measured"), default="modeled")
    p.add_argument("--out", default=None, help="mission log CSV")
    _add_scaling(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run the 27-environment suite and write the report")
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="base seed of the suite")
    p.add_argument("--modes", nargs="+", choices=("baseline", "roborun"), default=["baseline", "roborun"])
    p.add_argument("--latency", choices=("modeled", "measured"), default="modeled")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="suite_out")
    p.add_argument("--check", action="store_true", help="exit 2 when an acceptance threshold fails")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_scaling(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("report", help="rebuild report CSVs and SVG plots from a suite directory")
    p.add_argument("--out", default="suite_out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
