import math

import pytest

from roborun import cli
from roborun.bench import SuiteReport


def test_gen_writes_27_environments(tmp_path, capsys):
    assert cli.main(["gen", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert len(list(tmp_path.glob("env*.cfg"))) == 27
    assert len(list(tmp_path.glob("env*_obstacles.csv"))) == 27


def test_run_writes_log(tmp_path, capsys):
    out = tmp_path / "log.csv"
    assert cli.main(["run", "--env", "0", "--mode", "roborun", "--seed", "1", "--out", str(out)]) == cli.EXIT_OK
    assert out.is_file()
    assert "roborun:" in capsys.readouterr().out


def test_run_from_env_config(tmp_path, capsys):
    cli.main(["gen", "--out", str(tmp_path)])
    assert cli.main(["run", "--env", str(tmp_path / "env00.cfg"), "--mode", "baseline"]) == cli.EXIT_OK


def test_run_missing_model_exit_1(tmp_path, capsys):
    code = cli.main(["run", "--model", str(tmp_path / "none.txt")])
    assert code == cli.EXIT_INFRA
    assert "calibrate" in capsys.readouterr().err


def test_suite_missing_model_exit_1(tmp_path, capsys):
    code = cli.main(["suite", "--model", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_INFRA


def fake_report(time_rr, failed=False):
    rows = []
    for mode, t in (("baseline", 100.0), ("roborun", time_rr)):
        for d, g in ((0.3, 60.0), (0.6, 120.0)):
            rows.append({"env": "0", "seed": "0", "mode": mode, "density": str(d), "spread": "4.0",
                         "goal_distance": str(g), "status": "ok", "flight_time": t * (1 + d) * g / 60,
                         "distance": 10.0, "avg_velocity": 10.0 / t, "energy": 478.0 * t, "collided": 0,
                         "timed_out": 0, "reached_goal": 1, "decisions": 10, "replans": 2,
                         "compute_sum": 10.0 if mode == "baseline" else 5.0, "latency_sum": 20.0,
                         "feasible_decisions": 10, "violations": 0, "static_violations": 0, "degraded": 0})
    if failed:
        rows[-1] = dict(rows[-1], status="failed")
    return SuiteReport(rows)


@pytest.mark.parametrize("report, code", [(fake_report(90.0), cli.EXIT_CHECK),
                                          (fake_report(20.0, failed=True), cli.EXIT_INFRA)])
def test_suite_exit_codes(monkeypatch, tmp_path, capsys, report, code):
    monkeypatch.setattr(cli, "run_suite", lambda cfg, progress=None: report)
    assert cli.main(["suite", "--check", "--out", str(tmp_path)]) == code


def test_report_rebuilds_from_directory(tmp_path, capsys):
    from roborun.bench import SuiteConfig, run_suite

    run_suite(SuiteConfig(seeds_per_env=1, env_ids=(0,), output_dir=tmp_path))
    (tmp_path / "report.csv").unlink()
    assert cli.main(["report", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert (tmp_path / "report.csv").is_file()
    assert "cpu proxy" in capsys.readouterr().out
