"""Reference estimators: score matching, KSD minimization, NCE and MLE.

All of them start from the model's ``default_theta`` (the same start DLE uses)
and are minimized with the shared BFGS/Armijo routine, so parameter domains are
respected without projection.  Gradients in theta are central differences
unless a closed form is at hand (MLE uses the normalized score).

Like DLE, a run that does not meet its tolerance is returned with
``converged=False`` rather than raised.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _kernels
from .errors import CapabilityMissing, EmptyData, SteinfitError
from .features import as_data
from .models import fd_step
from .optim import bfgs_armijo

METHODS = ("SM", "KSD", "NCE", "MLE")


@dataclass
class BaselineResult:
    method: str
    theta_hat: np.ndarray
    aux: dict = field(default_factory=dict)
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline {self.method!r}")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "poly"
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind != "poly":
            raise ValueError("only the polynomial kernel is implemented")
        if self.degree < 1:
            raise ValueError("kernel degree must be at least 1")


@dataclass(frozen=True)
class BaselineOpts:
    gtol: float = 1e-6
    max_iter: int = 500
    theta_init: object = "default"
    jitter: float = 1e-6  # NCE noise covariance diagonal


def _start(model, X, opts):
    if isinstance(opts.theta_init, str):
        theta = np.asarray(model.default_theta(X), dtype=float)
    else:
        theta = np.atleast_1d(np.asarray(opts.theta_init, dtype=float))
    if model.param_domain is not None:
        theta = np.clip(theta, *model.param_domain)
    return model.check_theta(theta)


def fd_gradient(fun, x, feasible=None):
    """Central differences; falls back to a one-sided difference at a domain edge."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x)
    g = np.empty_like(x)
    f0 = None
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = h[a]
        up, dn = x + e, x - e
        ok_up = feasible is None or feasible(up)
        ok_dn = feasible is None or feasible(dn)
        if ok_up and ok_dn:
            g[a] = (fun(up) - fun(dn)) / (2.0 * h[a])
        else:
            f0 = fun(x) if f0 is None else f0
            g[a] = (fun(up) - f0) / h[a] if ok_up else (f0 - fun(dn)) / h[a]
    return g


def _minimize_fd(fun, theta0, model, opts):
    def fg(theta):
        return fun(theta), fd_gradient(fun, theta, model.in_domain)

    return bfgs_armijo(fg, theta0, gtol=opts.gtol, max_iter=opts.max_iter, feasible=model.in_domain)


# -- score matching -------------------------------------------------------------


def score_matching_objective(model, theta, X):
    """Fisher-divergence surrogate mean(0.5 |score_x|^2 + laplacian_x)."""
    s = model.score_x(theta, X)
    return float(np.mean(0.5 * (s**2).sum(axis=1) + model.laplacian_x(theta, X)))


def score_matching_estimate(model, X, opts=None):
    opts = opts or BaselineOpts()
    X = model.check_data(X)
    res = _minimize_fd(lambda t: score_matching_objective(model, t, X), _start(model, X, opts), model, opts)
    return BaselineResult("SM", res.x, {"objective": res.fun, "message": res.message},
                          res.converged, res.iterations)


# -- kernel Stein discrepancy ---------------------------------------------------


def ksd_vstat(model, theta, X, kernel=None):
    """V-statistic (1/n^2) sum_ij u_theta(x_i, x_j) for the polynomial kernel."""
    kernel = kernel or KernelSpec()
    S = model.score_x(theta, X)
    return _kernels.ksd_vstat(X, S, kernel.degree, kernel.offset)


def ksd_estimate(model, X, kernel=None, opts=None):
    kernel = kernel or KernelSpec()
    opts = opts or BaselineOpts()
    X = model.check_data(X)
    if X.shape[0] < 2:
        raise EmptyData("KSD needs at least two samples")
    res = _minimize_fd(lambda t: ksd_vstat(model, t, X, kernel), _start(model, X, opts), model, opts)
    return BaselineResult("KSD", res.x, {"discrepancy": res.fun, "message": res.message,
                                         "kernel": {"kind": kernel.kind, "degree": kernel.degree,
                                                    "offset": kernel.offset, "statistic": "V"}},
                          res.converged, res.iterations)


# -- noise contrastive estimation ---------------------------------------------


class GaussianNoise:
    """Moment-matched Gaussian noise distribution for NCE."""

    def __init__(self, X, jitter=1e-6):
        X = as_data(X)
        self.mean = X.mean(axis=0)
        d = X.shape[1]
        cov = np.atleast_2d(np.cov(X, rowvar=False)) if X.shape[0] > 1 else np.zeros((d, d))
        self.cov = cov + jitter * np.eye(d)
        self._chol = np.linalg.cholesky(self.cov)
        self._logdet = 2.0 * np.log(np.diag(self._chol)).sum()

    def sample(self, n, rng):
        return self.mean + rng.standard_normal((n, self.mean.size)) @ self._chol.T

    def log_density(self, X):
        Z = np.linalg.solve(self._chol, (X - self.mean).T)
        d = self.mean.size
        return -0.5 * (Z**2).sum(axis=0) - 0.5 * (d * np.log(2 * np.pi) + self._logdet)


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def nce_estimate(model, X, opts=None, rng=None):
    """NCE with as many noise points as data points.

    Returns theta_hat and, in ``aux["log_normalizer"]``, c_hat, the fitted
    additive correction so that log p_bar + c approximates the log density.
    """
    opts = opts or BaselineOpts()
    X = model.check_data(X)
    n = X.shape[0]
    if n < 2:
        raise EmptyData("NCE needs at least two samples")
    if rng is None:
        rng = np.random.default_rng(0)
    noise = GaussianNoise(X, opts.jitter)
    Y = noise.sample(n, rng)
    inside = np.all(np.isfinite(Y), axis=1) & model._in_support(Y)
    Y = Y[inside]  # noise outside the model support has p_bar = 0: certain "noise" label
    ln_x = noise.log_density(X)
    ln_y = noise.log_density(Y)
    ny = Y.shape[0]
    dropped = n - ny
    p = model.param_dim

    def loss(z):
        theta, c = z[:p], z[p]
        gx = model.log_unnorm(theta, X) + c - ln_x
        total = -np.sum(_log_sigmoid(gx))
        if ny:
            gy = model.log_unnorm(theta, Y) + c - ln_y
            total -= np.sum(_log_sigmoid(-gy))
        return float(total / (2 * n))

    def feasible(z):
        return model.in_domain(z[:p]) and np.isfinite(z[p])

    theta0 = _start(model, X, opts)
    c0 = float(np.mean(ln_x - model.log_unnorm(theta0, X)))
    z0 = np.append(theta0, c0)

    def fg(z):
        return loss(z), fd_gradient(loss, z, feasible)

    res = bfgs_armijo(fg, z0, gtol=opts.gtol, max_iter=opts.max_iter, feasible=feasible)
    return BaselineResult("NCE", res.x[:p].copy(),
                          {"log_normalizer": float(res.x[p]), "loss": res.fun, "noise_outside_support": int(dropped),
                           "message": res.message},
                          res.converged, res.iterations)


# -- maximum likelihood and the Cramer-Rao bound ------------------------------


def _require_tractable(model):
    if not (model.supports("log_density") and model.supports("score_theta")):
        raise CapabilityMissing(f"{model.name} has no tractable normalized density")


def fisher_information(model, theta, rng=None, mc_samples=200_000):
    """Per-observation Fisher information E[s s^T] at theta.

    One-dimensional models are integrated by adaptive quadrature over their
    support; otherwise a Monte Carlo average over exact model samples is used.
    """
    _require_tractable(model)
    theta = model.check_theta(theta)
    if model.input_dim == 1 and model.param_dim == 1:
        lo, hi = model.support_1d

        def integrand(x):
            pt = np.array([[x]])
            s = model.score_theta(theta, pt)[0, 0]
            return s * s * np.exp(model.log_density(theta, pt)[0])

        val = 0.0
        # split at the bulk of the mass so quad does not miss narrow regions
        if not model.supports("sample"):
            val = integrate.quad(integrand, lo, hi, limit=200)[0]
        else:
            probe = model.sample(theta, 4000, np.random.default_rng(12345))[:, 0]
            knots = np.unique(np.concatenate([[lo], np.quantile(probe, [0.001, 0.5, 0.999]), [hi]]))
            for a, b in zip(knots[:-1], knots[1:]):
                val += integrate.quad(integrand, a, b, limit=200, epsabs=1e-12, epsrel=1e-10)[0]
        return np.array([[val]])
    if rng is None:
        rng = np.random.default_rng(0)
    S = model.score_theta(theta, model.sample(theta, mc_samples, rng))
    return S.T @ S / mc_samples


def cramer_rao_bound(model, theta, rng=None, mc_samples=200_000):
    F = fisher_information(model, theta, rng, mc_samples)
    return np.linalg.inv(F)


def mle_estimate(model, X, opts=None):
    """Exact maximum likelihood by BFGS with the closed-form score."""
    _require_tractable(model)
    opts = opts or BaselineOpts()
    X = model.check_data(X)

    def fg(theta):
        return -float(np.mean(model.log_density(theta, X))), -model.score_theta(theta, X).mean(axis=0)

    res = bfgs_armijo(fg, _start(model, X, opts), gtol=opts.gtol, max_iter=opts.max_iter, feasible=model.in_domain)
    return BaselineResult("MLE", res.x, {"neg_loglik": res.fun, "message": res.message},
                          res.converged, res.iterations)


def mle_and_crb(model, X, opts=None, rng=None):
    """Exact maximum likelihood and the inverse Fisher information at theta_hat."""
    result = mle_estimate(model, X, opts)
    try:
        crb = cramer_rao_bound(model, result.theta_hat, rng)
    except (np.linalg.LinAlgError, SteinfitError) as exc:
        raise CapabilityMissing(f"Fisher information is not invertible at theta_hat: {exc}") from exc
    return result, crb
