"""Discriminative likelihood estimation.

theta_hat minimizes the profile log likelihood-ratio

    l(theta) = max_delta mean_i log(delta^T T_theta f(x_i) + 1).

The default ``profile`` method runs BFGS on l(theta) with the envelope gradient
(the inner maximizer is solved to tight tolerance, so differentiating at fixed
delta_hat is exact).  ``dual_auglag`` instead minimizes the Lagrangian dual of
the inner problem jointly over (mu, theta) with an augmented Lagrangian for the
equality constraint sum_i mu_i T_theta f(x_i) = 0.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .asymptotics import assumption_diagnostics, hessian_blocks
from .errors import ParamError, SteinfitError, Unbounded, Unidentifiable
from .features import stein_feature_grad_theta_matrix, stein_feature_matrix, tabulate
from .optim import bfgs_armijo
from .sdre import SolverOpts, solve_sdre

METHODS = ("profile", "dual_auglag")


@dataclass(frozen=True)
class DleOpts:
    outer_tol: float = 1e-6
    outer_max_iter: int = 500
    method: str = "profile"
    theta_init: object = "default"
    sdre_opts: SolverOpts = field(default_factory=SolverOpts)
    starts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.outer_tol <= 0 or self.outer_max_iter < 1 or self.starts < 1:
            raise ValueError("tolerances and iteration counts must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class DleResult:
    theta_hat: np.ndarray
    delta_hat: np.ndarray
    loglik_ratio: float
    converged: bool
    outer_iterations: int
    grad_norm: float
    method: str
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ProfilePoint:
    value: float
    grad: np.ndarray
    delta: np.ndarray
    loglik_ratio: float
    unidentifiable: bool
    T: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)


def profile_point(model, X, theta, table, sdre_opts=None, warm_start=None):
    T = stein_feature_matrix(model, theta, None, X, table=table, check_scaling=False).T
    sol = solve_sdre(T, sdre_opts, warm_start=warm_start, min_iter=1)
    G = stein_feature_grad_theta_matrix(model, theta, None, X, table=table)
    r = sol.ratios
    grad = (G @ sol.delta / r[:, None]).mean(axis=0)
    ll = float(np.log(r).mean())
    unident = sol.degenerate and not np.any(T)
    return ProfilePoint(sol.objective, grad, sol.delta, ll, unident, T, G, r)


def dle_profile(model, feature, X, theta, sdre_opts=None, warm_start=None):
    """Profile value l(delta_hat(theta), theta), its theta-gradient and delta_hat."""
    X = model.check_data(X)
    theta = model.check_theta(theta)
    pt = profile_point(model, X, theta, tabulate(feature, X), sdre_opts, warm_start)
    if pt.unidentifiable:
        warnings.warn("Stein feature matrix is identically zero; theta is unidentifiable", RuntimeWarning, stacklevel=2)
    return pt.value, pt.grad, pt.delta


def _schur_inverse(pt):
    """Inverse of H_td (-H_dd)^-1 H_dt at the current point, used as initial BFGS matrix."""
    n = pt.T.shape[0]
    r = pt.ratios
    W = pt.T / r[:, None]
    negHdd = W.T @ W / n
    grad_r = pt.G @ pt.delta
    H_dt = -((W / r[:, None]).T @ grad_r) / n + np.einsum("npb,n->bp", pt.G, 1.0 / r) / n
    try:
        S = H_dt.T @ np.linalg.solve(negHdd, H_dt)
        S = 0.5 * (S + S.T)
        ev = np.linalg.eigvalsh(S)
        if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
            return None
        return np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return None


def _initial_theta(model, X, opts):
    if isinstance(opts.theta_init, str):
        if opts.theta_init != "default":
            raise ParamError(f"unknown theta_init {opts.theta_init!r}")
        theta = np.asarray(model.default_theta(X), dtype=float)
    else:
        theta = np.atleast_1d(np.asarray(opts.theta_init, dtype=float))
    if model.param_domain is not None:
        lo, hi = model.param_domain
        theta = np.clip(theta, lo, hi)
    return model.check_theta(theta)


def _start_points(model, theta0, opts):
    points = [theta0]
    if opts.starts > 1:
        rng = np.random.default_rng(np.random.SeedSequence(opts.seed, spawn_key=(0x5157,)))
        for _ in range(opts.starts - 1):
            cand = theta0 + 0.5 * np.maximum(1.0, np.abs(theta0)) * rng.standard_normal(theta0.size)
            if model.param_domain is not None:
                cand = np.clip(cand, *model.param_domain)
            points.append(cand)
    return points


def estimate_dle(model, feature, X, opts=None):
    """Run DLE; returns a DleResult (``converged`` False when tolerances were not met)."""
    opts = opts or DleOpts()
    X = model.check_data(X)
    n = X.shape[0]
    b = feature.out_dim(X.shape[1])
    if n < b:
        warnings.warn(f"fewer samples ({n}) than ratio parameters ({b})", RuntimeWarning, stacklevel=2)
    table = tabulate(feature, X)
    theta0 = _initial_theta(model, X, opts)
    runner = _run_profile if opts.method == "profile" else _run_dual_auglag
    best = None
    failure = None
    for start in _start_points(model, theta0, opts):
        try:
            res = runner(model, X, table, start, opts)
        except Unbounded as exc:
            failure = exc
            continue
        if best is None or _better(res, best):
            best = res
    if best is None:
        # every start lies where some ratio direction is unbounded (for instance all
        # Stein features share a sign); retry once from the moment-based default
        fallback = model.check_theta(np.asarray(model.default_theta(X), dtype=float))
        if np.array_equal(fallback, theta0):
            raise failure
        best = runner(model, X, table, fallback, opts)
        best.diagnostics["start_fallback"] = True
    return _finish(model, X, table, best, opts)


def _better(a, b):
    if not np.isclose(a.loglik_ratio, b.loglik_ratio, rtol=1e-9, atol=1e-14):
        return a.loglik_ratio < b.loglik_ratio
    return np.linalg.norm(a.theta_hat) < np.linalg.norm(b.theta_hat)


def _run_profile(model, X, table, theta0, opts):
    warm = {"delta": None}
    seen = {"identified": False}

    def fg(theta):
        pt = profile_point(model, X, theta, table, opts.sdre_opts, warm["delta"])
        warm["delta"] = pt.delta
        if not pt.unidentifiable:
            seen["identified"] = True
        return pt.value, pt.grad

    first = profile_point(model, X, theta0, table, opts.sdre_opts)
    if first.unidentifiable:
        raise Unidentifiable("Stein features vanish identically on the data")
    warm["delta"] = first.delta
    H0 = _schur_inverse(first)
    res = bfgs_armijo(fg, theta0, gtol=opts.outer_tol, max_iter=opts.outer_max_iter,
                      feasible=model.in_domain, H0=H0)
    pt = profile_point(model, X, res.x, table, opts.sdre_opts, warm["delta"])
    return DleResult(res.x, pt.delta, pt.loglik_ratio, res.converged, res.iterations,
                     float(np.abs(pt.grad).max()), "profile", pt.unidentifiable,
                     {"message": res.message, "nfev": res.nfev, "profile_value": pt.value})


# -- Lagrangian dual path -------------------------------------------------------


def _run_dual_auglag(model, X, table, theta0, opts):
    n = X.shape[0]
    p = theta0.size
    scale = np.sqrt(n)
    # variables: v = log(-mu) / sqrt(n) (keeps mu < 0 and balances curvature), theta
    z = np.concatenate([np.zeros(n), theta0])
    T0 = stein_feature_matrix(model, theta0, None, X, table=table, check_scaling=False).T
    if not np.any(T0):
        raise Unidentifiable("Stein features vanish identically on the data")
    solve_sdre(T0, opts.sdre_opts)  # raises Unbounded when the dual is infeasible at the start
    lam = np.zeros(T0.shape[1])
    rho = 10.0
    # |log(-mu)| <= 50 bounds every implied ratio -1/mu well inside float range
    bounds = [(-50.0 / scale, 50.0 / scale)] * n
    if model.param_domain is not None:
        lo, hi = model.param_domain
        bounds += list(zip(lo, hi))
    else:
        bounds += [(None, None)] * p

    def parts(z):
        u = z[:n] * scale
        theta = z[n:]
        T = stein_feature_matrix(model, theta, None, X, table=table, check_scaling=False).T
        G = stein_feature_grad_theta_matrix(model, theta, None, X, table=table)
        e = np.exp(u)
        c = -(e @ T) / n
        return u, e, T, G, c

    def lagrangian(z, lam, rho):
        u, e, T, G, c = parts(z)
        w = lam + rho * c
        val = np.sum(e - u - 1.0) / n + lam @ c + 0.5 * rho * c @ c
        gu = (e - 1.0 - e * (T @ w)) / n * scale
        gt = -(e @ (G @ w)) / n
        return val, np.concatenate([gu, gt])

    prev_c = np.inf
    total_iter = 0
    converged = False
    stationarity = np.inf
    for _ in range(60):
        res = minimize(lagrangian, z, args=(lam, rho), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 20000, "maxcor": 30, "ftol": 1e-16, "gtol": 1e-12})
        z = res.x
        total_iter += res.nit
        _, _, _, _, c = parts(z)
        cnorm = float(np.abs(c).max())
        lam = lam + rho * c
        _, g = lagrangian(z, lam, 0.0)
        stationarity = float(np.abs(g).max())
        if cnorm <= 1e-8 and stationarity <= opts.outer_tol:
            converged = True
            break
        if cnorm > 1e-8 and cnorm > 0.5 * prev_c:
            rho = min(10.0 * rho, 1e10)
        prev_c = cnorm
    theta = z[n:].copy()
    if model.param_domain is not None:
        theta = np.clip(theta, *model.param_domain)
    mu = -np.exp(z[:n] * scale)
    T = stein_feature_matrix(model, theta, None, X, table=table, check_scaling=False).T
    delta0 = np.linalg.lstsq(T, -1.0 / mu - 1.0, rcond=None)[0]
    pt = profile_point(model, X, theta, table, opts.sdre_opts, delta0)
    return DleResult(theta, pt.delta, pt.loglik_ratio, converged, total_iter,
                     float(np.abs(pt.grad).max()), "dual_auglag", pt.unidentifiable,
                     {"constraint_norm": cnorm, "stationarity": stationarity, "penalty": rho,
                      "dual_mu_min": float(mu.max()), "profile_value": pt.value})


def _finish(model, X, table, res, opts):
    diag = dict(res.diagnostics)
    try:
        blocks = hessian_blocks(model, None, X, res.delta_hat, res.theta_hat, table=table)
        diag.update(assumption_diagnostics(blocks, model, X))
    except SteinfitError as exc:
        diag["hessian_error"] = str(exc)
    if opts.method == "profile":
        res.converged = bool(res.converged and res.grad_norm <= opts.outer_tol)
    return replace(res, diagnostics=diag)
