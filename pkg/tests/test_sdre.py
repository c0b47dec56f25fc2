import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from steinfit.errors import EmptyData, InfeasiblePoint, Unbounded
from steinfit.features import SteinFeatureMatrix
from steinfit.sdre import SolverOpts, dual_objective, sdre_objective, solve_sdre, solve_sdre_dual

T_SMALL = np.array([[1.0], [-0.5]])


def _balanced(rng, n, b):
    """Rows whose convex hull contains 0 in its interior, so the optimum is finite."""
    T = rng.normal(size=(n, b))
    return T - T.mean(axis=0) + 0.1 * rng.normal(size=b)


class TestSmallInstance:
    # maximize 0.5 [log(1 + d) + log(1 - d / 2)]: stationarity 1/(1+d) = 1/(2-d) gives d = 1/2
    def test_primal(self):
        sol = solve_sdre(T_SMALL)
        assert sol.delta[0] == pytest.approx(0.5, abs=1e-7)  # gradient tolerance 1e-8
        expected = 0.5 * (np.log(1.5) + np.log(0.75))
        assert sol.objective == pytest.approx(expected, abs=1e-12)
        assert sol.objective == pytest.approx(0.058891, abs=1e-6)
        np.testing.assert_allclose(sol.ratios, [1.5, 0.75], atol=1e-7)

    def test_dual(self):
        mu, delta, gap = solve_sdre_dual(T_SMALL)
        np.testing.assert_allclose(mu, [-2 / 3, -4 / 3], atol=1e-10)
        assert gap <= 1e-8
        primal = solve_sdre(T_SMALL)
        np.testing.assert_allclose(primal.ratios, -1.0 / mu, atol=1e-8)
        np.testing.assert_allclose(delta, primal.delta, atol=1e-8)

    def test_dual_objective_value(self):
        mu = np.array([-2 / 3, -4 / 3])
        expected = -np.log(2 / 3) - np.log(4 / 3) - 2 + 2
        assert dual_objective(mu) == pytest.approx(expected)


class TestAgainstGenericOptimizer:
    @pytest.mark.parametrize("b", [1, 2, 4])
    def test_primal_matches_scipy(self, b, rng):
        T = _balanced(rng, 60, b)
        sol = solve_sdre(T)

        def neg(d):
            r = T @ d + 1.0
            return np.inf if r.min() <= 0 else -np.mean(np.log(r))

        ref = minimize(neg, np.zeros(b), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
        assert sol.objective >= -ref.fun - 1e-10
        np.testing.assert_allclose(sol.delta, ref.x, atol=1e-5)

    @pytest.mark.parametrize("b", [1, 3])
    def test_primal_dual_agree(self, b, rng):
        T = _balanced(rng, 80, b)
        sol = solve_sdre(T)
        mu, delta, gap = solve_sdre_dual(T)
        assert gap < 1e-8
        np.testing.assert_allclose(sol.ratios, -1.0 / mu, rtol=1e-7)
        # complementary relations: T^T mu = 0 and sum of ratios weighted by mu
        assert np.abs(T.T @ mu).max() < 1e-8 * len(mu)


class TestEdgeCases:
    def test_zero_matrix_is_degenerate(self):
        sol = solve_sdre(np.zeros((5, 2)))
        assert sol.degenerate
        np.testing.assert_array_equal(sol.delta, 0.0)
        assert sol.objective == 0.0

    def test_one_signed_column_is_unbounded(self):
        with pytest.raises(Unbounded):
            solve_sdre(np.array([[1.0], [2.0], [0.5]]))

    def test_collinear_columns_flagged(self, rng):
        t = _balanced(rng, 40, 1)
        sol = solve_sdre(np.hstack([t, 2 * t]))
        assert sol.degenerate
        single = solve_sdre(t)
        assert sol.objective == pytest.approx(single.objective, abs=1e-9)

    def test_empty(self):
        with pytest.raises(EmptyData):
            solve_sdre(np.zeros((0, 2)))

    def test_objective_infeasible(self):
        with pytest.raises(InfeasiblePoint):
            sdre_objective([3.0], T_SMALL)

    def test_accepts_feature_matrix_wrapper(self):
        sol = solve_sdre(SteinFeatureMatrix(T_SMALL, np.zeros(1)))
        assert sol.delta[0] == pytest.approx(0.5)

    def test_ridge_shrinks(self, rng):
        T = _balanced(rng, 40, 2)
        plain = solve_sdre(T)
        ridged = solve_sdre(T, SolverOpts(ridge=1.0))
        assert np.linalg.norm(ridged.delta) < np.linalg.norm(plain.delta)

    def test_warm_start_same_answer(self, rng):
        T = _balanced(rng, 40, 3)
        cold = solve_sdre(T)
        warm = solve_sdre(T, warm_start=cold.delta + 0.01)
        np.testing.assert_allclose(warm.delta, cold.delta, atol=1e-8)
        # an infeasible warm start is ignored
        bad = solve_sdre(T, warm_start=np.full(3, 1e6))
        np.testing.assert_allclose(bad.delta, cold.delta, atol=1e-8)

    def test_options_validated(self):
        with pytest.raises(ValueError):
            SolverOpts(inner_tol=0.0)
        with pytest.raises(ValueError):
            SolverOpts(ridge=-1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_optimum_properties(seed, b):
    rng = np.random.default_rng(seed)
    T = _balanced(rng, 30, b)
    sol = solve_sdre(T)
    # delta = 0 is feasible with value 0, ratios stay positive, gradient vanishes
    assert sol.objective >= -1e-14
    assert sol.ratios.min() > 0
    assert np.abs((T / sol.ratios[:, None]).mean(axis=0)).max() <= 1e-8
    # the fitted ratio averages to one over the sample: mean(r) = 1 + delta^T mean(t) and
    # at the optimum mean(t / r) = 0 implies mean(1 / r) = 1
    assert np.mean(1.0 / sol.ratios) == pytest.approx(1.0, abs=1e-7)
