import numpy as np
import pytest

from steinfit.errors import ConfigError, UnknownDistribution
from steinfit.harness import (
    ExperimentConfig,
    ReplicationTable,
    Row,
    curve_csv,
    default_config,
    qq_and_scatter,
    run_replications,
    run_study,
    sample_distribution,
    stream,
    variance_curve,
)
from steinfit.models import TanhExpFamily


def _four_se(x):
    return 4 * x.std(axis=0) / np.sqrt(x.shape[0])


class TestSamplers:
    def test_gamma_mean(self, rng):
        X = sample_distribution("gamma", {"shape": 5.0, "rate": 1.0}, 100_000, rng)
        assert abs(X.mean() - 5.0) < _four_se(X)[0]

    def test_gamma_rate(self, rng):
        X = sample_distribution("gamma", {"shape": 5.0, "rate": 2.0}, 100_000, rng)
        assert abs(X.mean() - 2.5) < _four_se(X)[0]
        assert X.var() == pytest.approx(5.0 / 4.0, rel=0.03)

    def test_mixture_symmetric(self, rng):
        X = sample_distribution("gaussian_mixture", {"theta": -1.0, "other_mean": 1.0, "weight": 0.5}, 100_000, rng)
        assert abs(X.mean()) < _four_se(X)[0]
        # variance of the mixture is 1 + 1 (within-component plus between-component)
        assert X.var() == pytest.approx(2.0, rel=0.03)

    def test_gaussian(self, rng):
        X = sample_distribution("gaussian", {"mean": [1.0, -1.0], "sigma2": 4.0}, 50_000, rng)
        assert np.all(np.abs(X.mean(axis=0) - [1.0, -1.0]) < _four_se(X))
        np.testing.assert_allclose(X.var(axis=0), 4.0, rtol=0.05)

    def test_tanh_exp_covariance(self, rng):
        n = 100_000
        X = sample_distribution("tanh_exp", {"theta": [0.0, 0.0]}, n, rng)
        target = np.linalg.inv(TanhExpFamily().precision_at_zero())
        emp = np.cov(X, rowvar=False)
        # Gaussian sample covariance: Var(S_ij) = (S_ii S_jj + S_ij^2) / n
        se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
        assert np.all(np.abs(emp - target) < 4 * se)

    def test_unknown(self, rng):
        with pytest.raises(UnknownDistribution):
            sample_distribution("cauchy", {}, 10, rng)


class TestStreams:
    def test_reproducible(self):
        np.testing.assert_array_equal(stream(7, 3, 1).random(5), stream(7, 3, 1).random(5))

    def test_distinct_replications_uncorrelated(self):
        m = 10_000
        draws = np.array([stream(11, r, 0).standard_normal(m) for r in range(20)])
        C = np.corrcoef(draws)
        off = C[~np.eye(20, dtype=bool)]
        assert np.abs(off).max() < 5 / np.sqrt(m)
        # lagged cross-correlation between neighbouring streams
        for lag in (1, 2, 5):
            c = np.corrcoef(draws[0, lag:], draws[1, :-lag])[0, 1]
            assert abs(c) < 5 / np.sqrt(m)

    def test_keys_separate_seeds(self):
        a = stream(0, 1, 0).random()
        assert a != stream(0, 0, 1).random()
        assert a != stream(1, 1, 0).random()


def _small(study="variance_curve", **kw):
    cfg = dict(model="isotropic_gaussian", model_fixed={}, theta_star=(0.5,), feature="identity", estimators=("dle", "mle"),
               n_grid=(20, 40), reps=6, base_seed=123)
    cfg.update(kw)
    return default_config(study, **cfg)


class TestReplications:
    def test_single_rep_matches_sample_mean(self):
        cfg = _small(estimators=("dle",), n_grid=(30,), reps=1, estimator_opts={"dle": {"outer_tol": 1e-10}})
        table = run_replications(cfg)
        X = sample_distribution("gaussian", {"mean": [0.5], "sigma2": 1.0}, 30, stream(123, 0, 0))
        assert len(table) == 1
        assert table.rows[0].theta[0] == pytest.approx(X.mean(), abs=1e-8)

    def test_row_count_and_order(self):
        cfg = _small()
        table = run_replications(cfg)
        assert len(table) == cfg.reps * len(cfg.n_grid) * len(cfg.estimators)
        keys = [r.sort_key() for r in table.rows]
        assert keys == sorted(keys)
        assert all(r.wall_ms == 0.0 for r in table.rows)

    def test_byte_identical_across_workers(self):
        cfg = _small()
        a = run_study(cfg, workers=1)
        b = run_study(cfg, workers=3)
        assert a.files == b.files
        assert run_study(cfg, workers=1).files == a.files

    def test_timing_opt_in(self):
        table = run_replications(_small(reps=1, n_grid=(20,), record_timing=True))
        assert all(r.wall_ms > 0 for r in table.rows)

    def test_failures_recorded_not_raised(self):
        # constant features make DLE unidentifiable on every replication
        cfg = _small(feature="constant", estimators=("dle",), n_grid=(20,), reps=3)
        table = run_replications(cfg)
        assert all(not r.converged and r.error == "Unidentifiable" for r in table.rows)
        assert all(np.isnan(r.theta).all() for r in table.rows)

    def test_csv_schema(self):
        out = run_study(_small(reps=2, n_grid=(20,)))
        text = out.files["replications.csv"]
        assert text.splitlines()[0] == "rep,n,estimator,theta_1,loglik_ratio,converged,wall_ms"
        assert "\r" not in text and text.endswith("\n")
        assert out.files["curve.csv"].splitlines()[0] == "n,estimator,coord,variance,crb"


class TestConfig:
    def test_round_trip(self):
        cfg = default_config("model_select")
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [dict(reps=0), dict(n_grid=(50, 20)), dict(n_grid=()), dict(estimators=("em",)),
                                     dict(study="fig9"), dict(base_seed=-1)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            _small(**bad) if "study" not in bad else default_config(bad["study"])

    def test_bad_fixed_parameters(self):
        with pytest.raises(ConfigError):
            _small(model_fixed={"shape": 5.0}).build_model()

    def test_model_select_needs_candidates(self):
        with pytest.raises(ConfigError):
            default_config("model_select", candidates=())

    def test_defaults(self):
        vc = default_config("variance_curve")
        assert vc.n_grid == (50, 100, 150, 200, 400) and vc.reps == 1000
        assert default_config("qq_scatter").reps == 500
        assert default_config("gof_null").reps == 2000


def _table(values, n=10, est="dle", converged=None):
    converged = converged or [True] * len(values)
    rows = [Row(i, n, est, np.atleast_1d(np.asarray(v, dtype=float)), 0.0, c) for i, (v, c) in enumerate(zip(values, converged))]
    return ReplicationTable(rows)


class TestCurves:
    def test_unbiased_variance_and_exclusions(self):
        vals = [1.0, 2.0, 4.0, 100.0]
        curve = variance_curve(_table(vals, converged=[True, True, True, False]), crb=np.array([[2.0]]))
        (row,) = curve
        assert row.variance == pytest.approx(np.var([1.0, 2.0, 4.0], ddof=1))
        assert row.crb == pytest.approx(0.2)
        assert (row.used, row.excluded) == (3, 1)

    def test_csv_format(self):
        text = curve_csv(variance_curve(_table([0.1, 0.3])))
        assert text == "n,estimator,coord,variance,crb\n10,dle,1,0.019999999999999997,nan\n"

    def test_empty(self):
        with pytest.raises(ValueError):
            variance_curve(ReplicationTable([]))


class TestQQ:
    def test_single_replication(self):
        qq = qq_and_scatter(_table([[0.1, -0.2]], n=100), np.eye(2), theta_star=[0.0, 0.0])
        theo, emp = qq.qq[1]
        assert theo.shape == emp.shape == (1,)
        assert theo[0] == 0.0
        assert emp[0] == pytest.approx(1.0)

    def test_levels_and_coverage(self, rng):
        Z = rng.normal(size=(400, 2))
        qq = qq_and_scatter(_table(list(Z / 10.0), n=100), np.eye(2), theta_star=[0.0, 0.0])
        theo, emp = qq.qq[2]
        np.testing.assert_allclose(emp, np.sort(Z[:, 1]))
        assert qq.correlation[1] > 0.99
        assert 0.92 <= qq.coverage[0.95] <= 0.98
        assert set(qq.ellipses) == {0.95, 0.999}
