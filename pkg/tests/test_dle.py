import numpy as np
import pytest

from conftest import relerr
from steinfit.dle import DleOpts, dle_profile, estimate_dle
from steinfit.errors import Unbounded, Unidentifiable
from steinfit.features import Constant, Identity, PolyPair, Tanh, make_feature, stein_feature_matrix
from steinfit.models import GammaRate, GaussianMixtureLoc, IsotropicGaussian, TanhExpFamily, fd_step
from steinfit.sdre import solve_sdre


def _profile_fd(model, feature, X, theta):
    h = fd_step(theta)
    out = np.empty_like(theta)
    for a in range(theta.size):
        e = np.zeros_like(theta)
        e[a] = h[a]
        out[a] = (dle_profile(model, feature, X, theta + e)[0] - dle_profile(model, feature, X, theta - e)[0]) / (2 * h[a])
    return out


class TestProfile:
    def test_gaussian_at_sample_mean_is_zero(self, rng):
        X = rng.normal(0.4, 1.0, (50, 1))
        value, grad, delta = dle_profile(IsotropicGaussian(), Identity(), X, X.mean(axis=0))
        assert value == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)
        np.testing.assert_allclose(delta, 0.0, atol=1e-12)

    def test_degenerate_features_warn(self, rng):
        X = rng.normal(size=(20, 1))
        with pytest.warns(RuntimeWarning, match="unidentifiable"):
            value, grad, _ = dle_profile(IsotropicGaussian(), Constant(), X, [0.0])
        assert value == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    @pytest.mark.parametrize("model,feature,theta,draw", [
        (GammaRate(5.0), PolyPair(), np.array([1.3]), lambda r: r.gamma(5.0, 1.0, (200, 1))),
        (GaussianMixtureLoc(), PolyPair(), np.array([-0.6]), lambda r: r.normal(-0.5, 1.4, (200, 1))),
        (TanhExpFamily(), Tanh(), np.array([0.2, -0.1]), lambda r: r.normal(size=(200, 5))),
    ])
    def test_gradient_against_differences(self, model, feature, theta, draw, rng):
        X = draw(rng)
        _, grad, _ = dle_profile(model, feature, X, theta)
        assert relerr(grad, _profile_fd(model, feature, X, theta)) < 1e-4

    def test_zero_iff_stein_means_vanish(self, rng):
        X = rng.gamma(5.0, 1.0, (100, 1))
        m = GammaRate(5.0)
        # with f = x the Stein feature is 4 / x - theta, whose mean vanishes at theta = 4 mean(1 / x)
        root = np.array([4.0 * np.mean(1.0 / X)])
        assert np.abs(stein_feature_matrix(m, root, Identity(), X).T.mean()) < 1e-12
        assert dle_profile(m, Identity(), X, root)[0] < 1e-8
        assert dle_profile(m, Identity(), X, root * 1.1)[0] > 1e-4


class TestEstimate:
    def test_gaussian_closed_form(self, rng):
        for _ in range(5):
            X = rng.normal(rng.normal(), 1.0, (40, 1))
            res = estimate_dle(IsotropicGaussian(), Identity(), X, DleOpts(outer_tol=1e-10, theta_init=[0.0]))
            assert res.converged
            assert res.theta_hat[0] == pytest.approx(X.mean(), abs=1e-8)
            assert res.loglik_ratio == pytest.approx(0.0, abs=1e-12)

    def test_multivariate_gaussian_closed_form(self, rng):
        X = rng.normal(size=(60, 3)) + [1.0, -2.0, 0.5]
        res = estimate_dle(IsotropicGaussian(3), Identity(), X, DleOpts(outer_tol=1e-10))
        np.testing.assert_allclose(res.theta_hat, X.mean(axis=0), atol=1e-8)

    @pytest.mark.parametrize("model,theta_star,draw", [
        (GammaRate(5.0), 1.0, lambda r: r.gamma(5.0, 1.0, (300, 1))),
        (GaussianMixtureLoc(), -1.0, lambda r: np.where(r.random((300, 1)) < 0.5, -1.0, 1.0) + r.normal(size=(300, 1))),
    ])
    def test_methods_agree(self, model, theta_star, draw, rng):
        X = draw(rng)
        a = estimate_dle(model, PolyPair(), X, DleOpts(outer_tol=1e-9))
        b = estimate_dle(model, PolyPair(), X, DleOpts(method="dual_auglag"))
        assert a.converged and b.converged
        assert abs(a.theta_hat[0] - b.theta_hat[0]) < 1e-4
        assert abs(a.loglik_ratio - b.loglik_ratio) < 1e-4
        assert abs(a.theta_hat[0] - theta_star) < 0.5

    def test_gamma_consistency(self, rng):
        X = rng.gamma(5.0, 1.0, (10_000, 1))
        res = estimate_dle(GammaRate(5.0), PolyPair(), X)
        assert res.converged
        assert abs(res.theta_hat[0] - 1.0) <= 0.05

    def test_descent_from_start(self, rng):
        X = rng.gamma(5.0, 1.0, (200, 1))
        m = GammaRate(5.0)
        start = np.array([2.0])
        res = estimate_dle(m, PolyPair(), X, DleOpts(theta_init=start))
        assert res.loglik_ratio <= dle_profile(m, PolyPair(), X, start)[0]
        assert res.loglik_ratio >= 0.0

    def test_feature_scaling_invariance(self, rng):
        X = rng.gamma(5.0, 1.0, (200, 1))
        m = GammaRate(5.0)
        opts = DleOpts(outer_tol=1e-10)
        a = estimate_dle(m, PolyPair(), X, opts)
        b = estimate_dle(m, PolyPair() * 4.0, X, opts)
        assert b.theta_hat[0] == pytest.approx(a.theta_hat[0], abs=1e-7)
        assert b.loglik_ratio == pytest.approx(a.loglik_ratio, abs=1e-10)
        np.testing.assert_allclose(b.delta_hat * 4.0, a.delta_hat, rtol=1e-5, atol=1e-8)

    def test_multi_start_is_deterministic_and_no_worse(self, rng):
        X = np.where(rng.random((200, 1)) < 0.5, -1.0, 1.0) + rng.normal(size=(200, 1))
        m = GaussianMixtureLoc()
        single = estimate_dle(m, PolyPair(), X)
        multi = estimate_dle(m, PolyPair(), X, DleOpts(starts=4, seed=7))
        again = estimate_dle(m, PolyPair(), X, DleOpts(starts=4, seed=7))
        assert multi.loglik_ratio <= single.loglik_ratio + 1e-9
        np.testing.assert_array_equal(multi.theta_hat, again.theta_hat)

    @pytest.mark.parametrize("method", ["profile", "dual_auglag"])
    def test_unidentifiable(self, method, rng):
        with pytest.raises(Unidentifiable):
            estimate_dle(IsotropicGaussian(), Constant(), rng.normal(size=(10, 1)), DleOpts(method=method))

    @pytest.mark.parametrize("method", ["profile", "dual_auglag"])
    def test_unbounded_start_falls_back_to_default(self, method, rng):
        # every x exceeds the start, so theta - x < 0 on all rows and the ratio fit is unbounded there
        X = rng.normal(5.0, 1.0, (50, 1))
        res = estimate_dle(IsotropicGaussian(), Identity(), X, DleOpts(method=method, theta_init=[-10.0]))
        assert res.diagnostics["start_fallback"]
        assert res.theta_hat[0] == pytest.approx(X.mean(), abs=1e-6)

    def test_few_samples_warn(self, rng):
        # with fewer rows than features some direction makes every ratio grow
        with pytest.warns(RuntimeWarning, match="fewer samples"), pytest.raises(Unbounded):
            estimate_dle(IsotropicGaussian(), make_feature("identity+half_square"), rng.normal(size=(1, 1)))

    def test_result_reports_diagnostics(self, rng):
        X = rng.gamma(5.0, 1.0, (100, 1))
        res = estimate_dle(GammaRate(5.0), PolyPair(), X)
        assert res.diagnostics["eig_min_H_dd"] > 0
        assert res.grad_norm <= 1e-6
        sol = solve_sdre(stein_feature_matrix(GammaRate(5.0), res.theta_hat, PolyPair(), X).T)
        assert res.loglik_ratio == pytest.approx(sol.objective, abs=1e-12)

    def test_options_validated(self):
        with pytest.raises(ValueError):
            DleOpts(method="saddle")
        with pytest.raises(ValueError):
            DleOpts(outer_tol=-1.0)
