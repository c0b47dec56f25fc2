import json

import numpy as np
import pytest

from steinfit import __version__
from steinfit.cli import config_hash, dumps, main, read_csv_matrix
from steinfit.errors import DataError


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _csv(path, values):
    path.write_text("".join(f"{v}\n" for v in values))
    return str(path)


GAUSS = {"model": {"name": "isotropic_gaussian"}, "feature": {"name": "identity"},
         "estimator": {"name": "dle", "opts": {"outer_tol": 1e-10}}}


class TestEstimate:
    def test_two_point_gaussian(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", GAUSS)
        data = _csv(tmp_path / "x.csv", [1.0, 3.0])
        out = tmp_path / "report.json"
        assert main(["estimate", "--config", cfg, "--data", data, "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["theta_hat"] == [pytest.approx(2.0, abs=1e-10)]
        assert rep["loglik_ratio"] == pytest.approx(0.0, abs=1e-14)
        assert rep["converged"] is True
        assert rep["provenance"]["version"] == __version__
        assert len(rep["provenance"]["config_hash"]) == 64
        for key in ("covariance", "marginal_ci", "ic_score", "gof", "diagnostics", "delta_hat"):
            assert key in rep

    def test_report_fields_with_gof(self, tmp_path, rng):
        cfg = _write(tmp_path / "cfg.json", {"model": {"name": "gamma_rate", "fixed": {"shape": 5.0}},
                                              "feature": {"name": "identity+half_square"}})
        data = _csv(tmp_path / "x.csv", rng.gamma(5.0, 1.0, 300))
        out = tmp_path / "r.json"
        assert main(["estimate", "--config", cfg, "--data", data, "--out", str(out), "--gof"]) == 0
        rep = json.loads(out.read_text())
        assert rep["gof"]["df"] == 1
        assert rep["gof"]["statistic"] == pytest.approx(2 * 300 * rep["loglik_ratio"])
        assert rep["ic_score"] == pytest.approx(300 * rep["loglik_ratio"] - 1)
        lo, hi = rep["marginal_ci"][0]
        assert lo < rep["theta_hat"][0] < hi
        assert rep["diagnostics"]["eig_min_H_dd"] > 0

    def test_baseline_estimator_flag(self, tmp_path, rng):
        cfg = _write(tmp_path / "cfg.json", {"model": {"name": "gamma_rate"}})
        data = _csv(tmp_path / "x.csv", rng.gamma(5.0, 1.0, 200))
        out = tmp_path / "r.json"
        assert main(["estimate", "--config", cfg, "--data", data, "--estimator", "sm", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["estimator"] == "sm" and rep["loglik_ratio"] is None

    def test_not_converged_writes_report(self, tmp_path, rng):
        cfg = _write(tmp_path / "cfg.json", {"model": {"name": "gamma_rate", "theta_init": 3.0},
                                              "feature": {"name": "poly_pair"},
                                              "estimator": {"opts": {"outer_max_iter": 1}}})
        data = _csv(tmp_path / "x.csv", rng.gamma(5.0, 1.0, 200))
        out = tmp_path / "r.json"
        assert main(["estimate", "--config", cfg, "--data", data, "--out", str(out)]) == 3
        assert json.loads(out.read_text())["converged"] is False

    def test_bad_row_reports_line(self, tmp_path, capsys):
        cfg = _write(tmp_path / "cfg.json", GAUSS)
        data = tmp_path / "x.csv"
        data.write_text("1.0\nabc\n")
        assert main(["estimate", "--config", cfg, "--data", str(data)]) == 2
        assert "row 2" in capsys.readouterr().err

    def test_data_outside_support(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"model": {"name": "gamma_rate"}})
        data = _csv(tmp_path / "x.csv", [1.0, -2.0])
        assert main(["estimate", "--config", cfg, "--data", data]) == 2

    def test_gof_without_degrees_of_freedom(self, tmp_path, capsys):
        cfg = _write(tmp_path / "cfg.json", GAUSS)
        data = _csv(tmp_path / "x.csv", [1.0, 3.0, 2.0])
        assert main(["estimate", "--config", cfg, "--data", data, "--gof"]) == 1
        assert "b > dim" in capsys.readouterr().err
        assert main(["gof", "--config", cfg, "--data", data]) == 1

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = _write(tmp_path / "cfg.json", dict(GAUSS, colour="red"))
        data = _csv(tmp_path / "x.csv", [1.0])
        assert main(["estimate", "--config", cfg, "--data", data]) == 1
        assert "colour" in capsys.readouterr().err

    def test_unknown_nested_key(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"model": {"name": "gamma_rate", "rate": 2}})
        assert main(["estimate", "--config", cfg, "--data", _csv(tmp_path / "x.csv", [1.0])]) == 1

    def test_generator_and_seed_precedence(self, tmp_path, monkeypatch):
        cfg = dict(GAUSS, data={"generator": {"distribution": "gaussian", "params": {"mean": 1.0}, "n": 50}}, seed=4)
        path = _write(tmp_path / "cfg.json", cfg)

        def theta(*extra):
            out = tmp_path / "r.json"
            assert main(["estimate", "--config", path, "--out", str(out), *extra]) == 0
            rep = json.loads(out.read_text())
            return rep["theta_hat"][0], rep["provenance"]["seed"]

        assert theta()[1] == 4
        monkeypatch.setenv("STEINFIT_SEED", "9")
        env_theta, env_seed = theta()
        assert env_seed == 9
        flag_theta, flag_seed = theta("--seed", "4")
        assert flag_seed == 4 and flag_theta != env_theta
        monkeypatch.delenv("STEINFIT_SEED")
        assert theta()[0] == flag_theta

    def test_diagnose(self, tmp_path, capsys):
        cfg = _write(tmp_path / "cfg.json", {"model": {"name": "isotropic_gaussian"},
                                              "feature": {"name": "identity+half_square"}})
        data = _csv(tmp_path / "x.csv", np.linspace(-2, 2, 41))
        assert main(["diagnose", "--config", cfg, "--data", data]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert set(rep["diagnostics"]) >= {"eig_min_H_dd", "eig_min_schur", "norm_H_tt"}


class TestExperiment:
    CFG = {"experiment": {"model": "isotropic_gaussian", "model_fixed": {}, "theta_star": [0.2],
                          "feature": "identity", "estimators": ["dle", "sm"], "n_grid": [20, 40], "reps": 5}}

    def test_outputs_and_determinism(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", self.CFG)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["experiment", "variance-curve", "--config", cfg, "--out", str(a), "--seed", "3"]) == 0
        assert main(["experiment", "variance-curve", "--config", cfg, "--out", str(b), "--seed", "3",
                     "--workers", "2"]) == 0
        names = sorted(p.name for p in a.iterdir())
        assert names == ["curve.csv", "replications.csv", "summary.json"]
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()
        curve = (a / "curve.csv").read_text().splitlines()
        assert len(curve) == 1 + 2 * 2
        summary = json.loads((a / "summary.json").read_text())
        assert summary["provenance"]["seed"] == 3

    def test_seed_changes_output(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", self.CFG)
        main(["experiment", "variance-curve", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["experiment", "variance-curve", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "replications.csv").read_bytes() != (tmp_path / "b" / "replications.csv").read_bytes()

    def test_qq_shape(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"experiment": {"reps": 20, "n_grid": [100], "reference_samples": 20000}})
        assert main(["experiment", "qq", "--config", cfg, "--out", str(tmp_path / "q")]) == 0
        lines = (tmp_path / "q" / "qq.csv").read_text().splitlines()
        assert lines[0] == "coord,level,theoretical,empirical"
        assert len(lines) == 1 + 2 * 20
        assert (tmp_path / "q" / "ellipse.csv").exists()

    def test_bad_experiment_config(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"experiment": {"reps": 0}})
        assert main(["experiment", "qq", "--config", cfg, "--out", str(tmp_path / "q")]) == 1
        cfg = _write(tmp_path / "cfg2.json", {"experiment": {"n_grid": [50, 10]}})
        assert main(["experiment", "qq", "--config", cfg, "--out", str(tmp_path / "q")]) == 1


class TestSerialization:
    def test_seventeen_digits_round_trip(self):
        x = 0.1 + 0.2
        text = dumps({"a": x, "b": [1.0, np.float64(1 / 3)], "c": np.nan, "d": np.array([[1, 2]])})
        back = json.loads(text)
        assert back["a"] == x and back["b"][1] == 1 / 3
        assert back["c"] is None and back["d"] == [[1, 2]]
        assert "0.30000000000000004" in text

    def test_hash_is_canonical(self):
        assert config_hash({"a": 1, "b": [1.0]}) == config_hash({"b": [1.0], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_csv_reader(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("x,y\n# comment\n1,2\n3,4\n")
        np.testing.assert_array_equal(read_csv_matrix(p), [[1, 2], [3, 4]])
        p.write_text("1,2\n3\n")
        with pytest.raises(DataError, match="row 2"):
            read_csv_matrix(p)
        p.write_text("1\nnan\n")
        with pytest.raises(DataError, match="non-finite"):
            read_csv_matrix(p)

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit):
            main(["--version"])
        assert __version__ in capsys.readouterr().out
