"""Stein density-ratio estimation for a fixed model parameter.

The ratio model is r(x; delta) = delta^T t(x) + 1 with t the Stein feature row.
The primal problem maximizes the mean log ratio over delta (concave, with a
natural log barrier); the dual minimizes

    sum_i [-log(-mu_i) - 1] - sum_i mu_i    subject to    sum_i mu_i t_i = 0

over mu < 0, with r_i = -1 / mu_i at the optimum.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import _kernels
from .errors import EmptyData, InfeasiblePoint, MaxIterations, Unbounded
from .features import SteinFeatureMatrix

RATIO_FLOOR = 1e-10
ARMIJO_C1 = 1e-4
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SolverOpts:
    inner_tol: float = 1e-8
    max_iter: int = 200
    ridge: float = 0.0

    def __post_init__(self):
        if self.inner_tol <= 0 or self.max_iter < 1 or self.ridge < 0:
            raise ValueError("inner_tol and max_iter must be positive, ridge non-negative")


@dataclass
class SdreSolution:
    delta: np.ndarray
    ratios: np.ndarray
    objective: float
    iterations: int
    grad_norm: float
    degenerate: bool = False
    dual_mu: np.ndarray = None


def _matrix(T):
    if isinstance(T, SteinFeatureMatrix):
        T = T.T
    T = np.asarray(T, dtype=float)
    if T.ndim != 2:
        raise ValueError("Stein feature matrix must be 2-D")
    if T.shape[0] == 0:
        raise EmptyData("no rows in Stein feature matrix")
    if not np.all(np.isfinite(T)):
        raise ValueError("Stein feature matrix has non-finite entries")
    return T


def sdre_objective(delta, T, ridge=0.0):
    """Mean log ratio and its gradient.  Raises InfeasiblePoint if any r_i <= 0."""
    T = _matrix(T)
    delta = np.asarray(delta, dtype=float)
    value, grad, _, rmin = _kernels.sdre_terms(T, delta)
    if not rmin > 0:
        raise InfeasiblePoint(f"ratio {rmin:.3g} is not positive")
    if ridge:
        value -= ridge * float(delta @ delta)
        grad = grad - 2.0 * ridge * delta
    return value, grad


def _terms(T, delta, ridge):
    value, grad, hess, rmin = _kernels.sdre_terms(T, delta)
    if ridge and rmin > 0:
        value -= ridge * float(delta @ delta)
        grad = grad - 2.0 * ridge * delta
        hess = hess - 2.0 * ridge * np.eye(len(delta))
    return value, grad, hess, rmin


def _newton_direction(hess, grad):
    """Solve (-H) step = grad; fall back to the pseudo-inverse when ill-conditioned."""
    negH = -hess
    ev = np.linalg.eigvalsh(negH)
    top = ev[-1]
    if top <= 0 or ev[0] <= top / COND_LIMIT:
        return np.linalg.pinv(negH, rcond=1.0 / COND_LIMIT, hermitian=True) @ grad, True
    return np.linalg.solve(negH, grad), False


def solve_sdre(T, opts=None, warm_start=None, min_iter=0):
    """Damped Newton ascent on the mean log ratio.

    Starts at ``warm_start`` when that point is strictly feasible, else at 0.
    ``min_iter`` forces that many Newton steps even when the start already meets
    the tolerance; such polishing steps are taken in full when they stay
    feasible (their gain can sit below rounding, so Armijo is not applied).
    """
    opts = opts or SolverOpts()
    T = _matrix(T)
    n, b = T.shape
    delta = np.zeros(b)
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        if ws.shape == (b,) and np.all(np.isfinite(ws)) and (T @ ws + 1.0).min() >= RATIO_FLOOR:
            delta = ws.copy()
    tmax = float(np.abs(T).max())
    degenerate = bool(tmax == 0.0)
    value, grad, hess, _ = _terms(T, delta, opts.ridge)
    it = 0
    while True:
        gnorm = float(np.abs(grad).max())
        if gnorm <= opts.inner_tol:
            if it >= min_iter or gnorm == 0.0:
                break
            step, _ = _newton_direction(hess, grad)
            cand = delta + step
            cv, cg, ch, crmin = _terms(T, cand, opts.ridge)
            if crmin < RATIO_FLOOR or not np.abs(cg).max() < gnorm:
                break
            delta, value, grad, hess = cand, cv, cg, ch
            it += 1
            continue
        if it >= opts.max_iter:
            raise MaxIterations(f"SDRE stopped after {it} Newton steps, |grad|={gnorm:.3g}")
        step, singular = _newton_direction(hess, grad)
        degenerate = degenerate or singular
        slope = float(grad @ step)
        alpha = 1.0
        # below this the change in the mean log ratio is rounding noise; such a
        # step is still taken when it reduces the gradient
        noise = 1e4 * np.finfo(float).eps * max(1.0, abs(value))
        while True:
            cand = delta + alpha * step
            cv, cg, ch, crmin = _terms(T, cand, opts.ridge)
            if crmin >= RATIO_FLOOR and cv >= value + ARMIJO_C1 * alpha * slope:
                break
            if crmin >= RATIO_FLOOR and cv >= value - noise and np.abs(cg).max() < gnorm:
                break
            alpha *= 0.5
            if alpha < 1e-20:
                raise MaxIterations("SDRE line search failed to make progress")
        delta, value, grad, hess = cand, cv, cg, ch
        it += 1
        if float(np.abs(delta).max()) * tmax > 1e12:
            raise Unbounded("ratio objective is unbounded above for this Stein feature matrix")
    if not degenerate and b:
        ev = np.linalg.eigvalsh(-hess)
        degenerate = bool(ev[-1] <= 0 or ev[0] <= ev[-1] / COND_LIMIT)
    ratios = T @ delta + 1.0
    if ratios.max() > 1e6 and has_recession_direction(T):
        raise Unbounded("ratio objective is unbounded above for this Stein feature matrix")
    return SdreSolution(delta, ratios, value, it, gnorm, degenerate)


def has_recession_direction(T):
    """True when some d gives T d >= 0 with T d != 0 (the mean log ratio then
    increases without bound along d)."""
    n, b = T.shape
    scale = max(float(np.abs(T).max()), 1e-300)
    A = T / scale
    res = linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(n), bounds=[(-1.0, 1.0)] * b, method="highs")
    return bool(res.status == 0 and -res.fun > 1e-9 * n)


def dual_objective(mu):
    mu = np.asarray(mu, dtype=float)
    return float(np.sum(-np.log(-mu) - 1.0) - mu.sum())


def solve_sdre_dual(T, opts=None):
    """Newton on the KKT system of the dual, from the infeasible start mu = -1.

    Returns ``(mu, delta, gap)`` where delta is recovered by least squares from
    -1/mu_i = delta^T t_i + 1 and gap = |primal value - dual value / n|.
    """
    opts = opts or SolverOpts()
    T = _matrix(T)
    n, b = T.shape
    mu = -np.ones(n)
    lam = np.zeros(b)

    def residual(mu, lam):
        rd = -1.0 / mu - 1.0 + T @ lam
        rp = T.T @ mu
        return rd, rp

    rd, rp = residual(mu, lam)
    it = 0
    tol = opts.inner_tol
    while max(np.abs(rd).max(), np.abs(rp).max() / n) > tol * 1e-2:
        if it >= opts.max_iter:
            raise MaxIterations("dual SDRE did not converge")
        # Hessian of the separable objective is diag(1 / mu^2).
        dinv = mu**2
        grad = -1.0 / mu - 1.0
        # Eliminate dmu: dmu = -D^{-1}(grad + T lam_new); T^T dmu = -T^T mu.
        S = T.T @ (dinv[:, None] * T)
        rhs = rp - T.T @ (dinv * grad)
        lam_new = np.linalg.lstsq(S, rhs, rcond=None)[0] if b else lam
        dmu = -dinv * (grad + T @ lam_new)
        dlam = lam_new - lam
        norm0 = np.sqrt(np.sum(rd**2) + np.sum(rp**2))
        alpha = 1.0
        while True:
            cmu = mu + alpha * dmu
            if np.all(cmu < 0):
                crd, crp = residual(cmu, lam + alpha * dlam)
                if np.sqrt(np.sum(crd**2) + np.sum(crp**2)) <= (1.0 - 0.01 * alpha) * norm0:
                    break
            alpha *= 0.5
            if alpha < 1e-20:
                raise MaxIterations("dual SDRE line search failed")
        mu, lam, rd, rp = cmu, lam + alpha * dlam, crd, crp
        it += 1
    ratios = -1.0 / mu
    delta = np.linalg.lstsq(T, ratios - 1.0, rcond=None)[0] if b else np.zeros(0)
    r = T @ delta + 1.0
    primal = float(np.mean(np.log(r))) if r.min() > 0 else -np.inf
    gap = abs(primal - dual_objective(mu) / n)
    return mu, delta, gap
