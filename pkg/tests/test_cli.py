import csv
import json

import pytest

from cdoc.cli import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, load_config, main


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_solve_writes_solution_and_trajectory(tmp_path):
    assert main(["solve", "lqr-b", "--out", str(tmp_path)]) == EXIT_OK
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["converged"] and sol["J"] == pytest.approx(0.4142, abs=1e-3)
    rows = _rows(tmp_path / "trajectory.csv")
    assert rows[0] == ["t", "x1", "p1", "lambda1", "mu1", "u1"]
    assert len(rows) == 102


def test_sweep_outputs(tmp_path):
    assert main(["sweep", "lqr-b", "--weights", "0,10", "--grid", "51", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "tradeoff.csv")
    assert rows[0][:4] == ["weight", "J", "Jc", "converged"]
    assert len(rows) == 3
    assert len(list(tmp_path.glob("trajectory_w*.csv"))) == 2


def test_montecarlo_outputs(tmp_path):
    code = main(["montecarlo", "lqr-a-stable", "--samples", "5", "--grid", "51",
                 "--seed", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert len(_rows(tmp_path / "mc_samples.csv")) == 6
    summary = json.loads((tmp_path / "mc_summary.json").read_text())
    assert summary["seed"] == 3


def test_verify_outputs(tmp_path):
    assert main(["verify", "lqr-b", "--suite", "stm", "--grid", "201", "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "verify.json").read_text())["results"]["passed"]


def test_ini_config_and_flag_override(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[problem]\nname = zermelo\np0 = 0.0\n\n[run]\nN = 41\nseed = 4\n\n"
                   "[solver]\nconstraint_tol = 1e-7\n\n[weights]\nalpha = 0\n")
    settings = load_config(cfg)
    assert settings["overrides"] == {"p0": 0.0} and settings["N"] == 41
    assert main(["solve", str(cfg), "--grid", "31", "--out", str(tmp_path / "o")]) == EXIT_OK
    sol = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert sol["grid"]["N"] == 31 and sol["J"] == pytest.approx(-1.0, abs=1e-3)


def test_json_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"problem": {"name": "lqr-b"}, "run": {"N": 21},
                               "weights": {"alpha": [0, 5]}}))
    settings = load_config(cfg)
    assert settings["weights"] == [0.0, 5.0] and settings["N"] == 21


@pytest.mark.parametrize("argv", [
    ["solve", "no-such-problem"],
    ["verify", "lqr-b", "--suite", "bogus"],
    ["montecarlo", "lqr-b", "--samples", "0"],
    ["sweep", "lqr-b", "--weights", ""],
    ["sweep", "lqr-b", "--weights", "1,-1"],
    ["solve", "lqr-b", "--grid", "1"],
    ["frobnicate"],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if len(argv) > 1 else argv) == EXIT_USAGE


def test_unknown_solver_option(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[problem]\nname = lqr-b\n[solver]\nwarp = 9\n")
    assert main(["solve", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


def test_non_convergence_exit_code(tmp_path):
    cfg = tmp_path / "tight.ini"
    cfg.write_text("[problem]\nname = zermelo\n[solver]\nouter_iterations = 1\ninner_iterations = 2\n")
    assert main(["solve", str(cfg), "--out", str(tmp_path)]) == EXIT_NOT_CONVERGED
