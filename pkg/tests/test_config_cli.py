import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from girsanov_grad import config as C
from girsanov_grad.cli import main
from girsanov_grad.errors import InvalidInputError

FULL = {
    "domain": {"lo": [-2.5], "hi": [0.5]},
    "drift": {"potential": [[0, 0, -2, 0, 1]]},
    "diffusion": [[1.0]],
    "basis": [
        {"family": "gaussian_bump", "direction": [1], "center": [-1], "width": 0.5},
        {"family": "constant", "direction": [1]},
        {"family": "polynomial", "direction": [1], "coord": 0, "power": 1},
    ],
    "lambda": 1.0, "initial_state": [-1.0], "dt": 0.01, "t_max": 20,
    "running_cost": {"const": 1.0},
}


class TestConfig:
    def test_builtin_reference(self):
        spec = C.problem_from_dict({"builtin": "double-well", "params": {"lam": 0.5}})
        assert spec.lam == 0.5 and spec.n_basis == 3

    def test_full_problem(self):
        spec = C.problem_from_dict(FULL)
        assert spec.dimension == 1 and spec.n_basis == 3
        # drift is minus the potential gradient: -(4x^3 - 4x)
        assert spec.drift(0.0, np.array([2.0]))[0] == pytest.approx(-24.0)

    def test_sup_bound_override(self):
        cfg = json.loads(json.dumps(FULL))
        cfg["basis"][1]["sup_bound"] = 5.0
        assert C.problem_from_dict(cfg).sup_bounds[1] == 5.0

    def test_load_problem(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(FULL))
        assert C.load_problem(path).name == "custom"

    @pytest.mark.parametrize("mutate", [
        lambda c: c.pop("domain"),
        lambda c: c.update(colour="red"),
        lambda c: c["basis"].append({"family": "spline", "direction": [1]}),
        lambda c: c.update(dimension=2),
        lambda c: c.update(running_cost={"weight": 1}),
    ])
    def test_rejects(self, mutate):
        cfg = json.loads(json.dumps(FULL))
        mutate(cfg)
        with pytest.raises(InvalidInputError):
            C.problem_from_dict(cfg)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text("{")
        with pytest.raises(InvalidInputError):
            C.load_problem(path)


def _run(tmp_path, *argv):
    return main([*argv, "--out-dir", str(tmp_path)])


class TestUsageErrors:
    @pytest.mark.parametrize("argv", [
        ["estimate"],
        ["optimize", "--seed", "1", "--method", "bfgs"],
        ["sweep", "--seed", "1", "--b-grid", "1:0:0.1"],
        ["verify", "--seed", "1", "--suite", "everything"],
        ["estimate", "--seed", "1", "--n", "1"],
        ["estimate", "--seed", "1", "--threads", "0"],
        ["estimate", "--seed", "1", "--a", "x,y"],
        [],
    ])
    def test_exit_two(self, argv, tmp_path):
        with pytest.raises(SystemExit) as exc:
            _run(tmp_path, *argv)
        assert exc.value.code == 2

    def test_seed_from_config(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"seed": 3, "n": 200, "problem": "fixed-horizon"}))
        assert _run(tmp_path, "estimate", "--config", str(cfg)) == 0

    def test_runtime_error_exit_one(self, tmp_path, capsys):
        assert _run(tmp_path, "estimate", "--seed", "1", "--problem", "nope") == 1
        assert "error" in capsys.readouterr().err

    def test_wrong_coefficient_count(self, tmp_path):
        rc = _run(tmp_path, "estimate", "--seed", "1", "--problem", "double-well",
                  "--a", "1,2", "--n", "10")
        assert rc == 1


class TestEstimate:
    def test_outputs(self, tmp_path):
        rc = _run(tmp_path, "estimate", "--seed", "4", "--n", "2000", "--b", "1",
                  "--dt", "2e-3", "--bridge", "--a", "1", "--dump-paths")
        assert rc == 0
        for name in ("phi", "gradient", "hessian", "kl", "free_energy"):
            assert (tmp_path / f"{name}.json").exists()
        phi = json.loads((tmp_path / "phi.json").read_text())
        assert set(phi) == {"mean", "std_error", "n_samples", "censored_fraction"}
        assert phi["n_samples"] == 2000
        grad = json.loads((tmp_path / "gradient.json").read_text())
        assert grad["formula"] == "paper"
        with open(tmp_path / "paths.csv") as fh:
            assert sum(1 for _ in fh) == 2001

    def test_deterministic_across_threads(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["estimate", "--seed", "9", "--n", "3000", "--problem", "double-well",
                     "--threads", "1", "--out-dir", str(a)]) == 0
        assert main(["estimate", "--seed", "9", "--n", "3000", "--problem", "double-well",
                     "--threads", "3", "--out-dir", str(b)]) == 0
        for name in ("phi", "gradient", "hessian", "kl", "free_energy"):
            assert (a / f"{name}.json").read_bytes() == (b / f"{name}.json").read_bytes()

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"seed": 3, "n": 200, "problem": "fixed-horizon"}))
        assert _run(tmp_path, "estimate", "--config", str(cfg), "--n", "300") == 0
        assert json.loads((tmp_path / "phi.json").read_text())["n_samples"] == 300

    def test_problem_file(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(FULL))
        assert _run(tmp_path, "estimate", "--seed", "1", "--n", "100",
                    "--problem", str(path)) == 0


class TestOptimize:
    def test_gd_quadratic(self, tmp_path):
        rc = _run(tmp_path, "optimize", "--seed", "1", "--n", "200", "--problem",
                  "fixed-horizon", "--a0", "1.5")
        assert rc == 0
        with open(tmp_path / "trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:2] == ["j", "a0"]
        assert json.loads((tmp_path / "trace.json").read_text())["method"] == "gd"

    def test_newton_not_converged_exits_one(self, tmp_path):
        rc = _run(tmp_path, "optimize", "--seed", "1", "--n", "300", "--problem",
                  "double-well", "--method", "newton", "--max-iter", "0")
        assert rc == 1
        trace = json.loads((tmp_path / "trace.json").read_text())
        assert trace["termination"] == "max_iterations"


class TestVerifyAndSweep:
    def test_identities(self, tmp_path):
        assert _run(tmp_path, "verify", "--seed", "2", "--n", "1000") == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report and all(set(r) == {"check_name", "value", "oracle", "tolerance", "pass"}
                              for r in report)

    def test_sweep(self, tmp_path):
        assert _run(tmp_path, "sweep", "--seed", "2", "--n", "300", "--dt", "1e-2",
                    "--b-grid", "0.5:1.0:0.5") == 0
        with open(tmp_path / "sweep.csv") as fh:
            assert len(list(csv.reader(fh))) == 3

    def test_nonconvexity_suite(self, tmp_path):
        _run(tmp_path, "verify", "--suite", "nonconvexity", "--seed", "2", "--n", "300",
             "--dt", "1e-2", "--b-grid", "1:1:1")
        assert (tmp_path / "sweep.csv").exists() and (tmp_path / "report.json").exists()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "girsanov_grad", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "estimate" in out.stdout
