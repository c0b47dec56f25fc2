"""Unnormalized density models.

Every model exposes log p_bar(x; theta) and its input-space derivatives.  Models
with a tractable normalizer additionally expose the normalized log density, the
parameter score and an exact sampler; those are used by the baselines and by
the simulation harness, never by the Stein-based estimators.

Model methods are batched over rows of ``X`` (shape (n, d)).  The module-level
functions ``log_unnorm``, ``score_x``, ``mixed_grad`` and ``laplacian_x`` are
the single-point forms.
"""

import numpy as np
from scipy.special import expit, gammaln

from .errors import CapabilityMissing, DomainError, ParamError
from .features import FeatureFunction, TanhExpStatistic, as_data

_EPS = np.finfo(float).eps


def fd_step(v):
    """Central-difference step eps^(1/3) * max(1, |v|), coordinatewise."""
    return _EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(v))


class DensityModel:
    """Base class; subclasses implement the underscored batched kernels."""

    name = "model"
    param_dim = 1
    input_dim = 1
    param_domain = None  # (lower, upper) arrays or None
    support_1d = (-np.inf, np.inf)  # integration range for one-dimensional models
    # True when grad_x log p_bar is affine in theta, so second theta-derivatives
    # of Stein features vanish.
    linear_in_theta = False

    # -- validation -------------------------------------------------------

    def check_theta(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.param_dim,):
            raise ParamError(f"{self.name}: theta must have length {self.param_dim}, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ParamError(f"{self.name}: theta must be finite")
        if self.param_domain is not None:
            lo, hi = self.param_domain
            if np.any(theta < lo) or np.any(theta > hi):
                raise ParamError(f"{self.name}: theta={theta} outside parameter domain [{lo}, {hi}]")
        return theta

    def in_domain(self, theta):
        if self.param_domain is None:
            return bool(np.all(np.isfinite(theta)))
        lo, hi = self.param_domain
        return bool(np.all(np.isfinite(theta)) and np.all(theta >= lo) and np.all(theta <= hi))

    def check_data(self, X):
        X = as_data(X)
        if X.shape[1] != self.input_dim:
            raise DomainError(f"{self.name}: expected {self.input_dim} columns, got {X.shape[1]}")
        bad = ~np.all(np.isfinite(X), axis=1) | ~self._in_support(X)
        if bad.any():
            row = int(np.argmax(bad))
            raise DomainError(f"{self.name}: point outside model support", row=row)
        return X

    def _in_support(self, X):
        return np.ones(X.shape[0], dtype=bool)

    # -- public batched API ------------------------------------------------

    def log_unnorm(self, theta, X):
        return self._log_unnorm(self.check_theta(theta), self.check_data(X))

    def score_x(self, theta, X):
        return self._score_x(self.check_theta(theta), self.check_data(X))

    def mixed_grad(self, theta, X):
        """Shape (n, p, d): d/d theta_a d/d x_j log p_bar."""
        return self._mixed_grad(self.check_theta(theta), self.check_data(X))

    def laplacian_x(self, theta, X):
        return self._laplacian_x(self.check_theta(theta), self.check_data(X))

    def score_theta(self, theta, X):
        """Gradient in theta of the *normalized* log density, shape (n, p)."""
        return self._score_theta(self.check_theta(theta), self.check_data(X))

    def log_density(self, theta, X):
        return self._log_density(self.check_theta(theta), self.check_data(X))

    def sample(self, theta, n, rng):
        return self._sample(self.check_theta(theta), int(n), rng)

    def default_theta(self, X):
        return np.zeros(self.param_dim)

    def supports(self, capability):
        impl = getattr(type(self), "_" + capability)
        return impl is not getattr(DensityModel, "_" + capability)

    # -- kernels -----------------------------------------------------------

    def _log_unnorm(self, theta, X):
        raise NotImplementedError

    def _score_x(self, theta, X):
        raise NotImplementedError

    def _mixed_grad(self, theta, X):
        h = fd_step(theta)
        out = np.empty((X.shape[0], self.param_dim, X.shape[1]))
        for a in range(self.param_dim):
            e = np.zeros_like(theta)
            e[a] = h[a]
            out[:, a, :] = (self._score_x(theta + e, X) - self._score_x(theta - e, X)) / (2.0 * h[a])
        return out

    def _laplacian_x(self, theta, X):
        h = fd_step(X)
        total = np.zeros(X.shape[0])
        for j in range(X.shape[1]):
            E = np.zeros_like(X)
            E[:, j] = h[:, j]
            total += (self._score_x(theta, X + E)[:, j] - self._score_x(theta, X - E)[:, j]) / (2.0 * h[:, j])
        return total

    def _score_theta(self, theta, X):
        raise CapabilityMissing(f"{self.name} has no tractable parameter score")

    def _log_density(self, theta, X):
        raise CapabilityMissing(f"{self.name} has no tractable normalizer")

    def _sample(self, theta, n, rng):
        raise CapabilityMissing(f"{self.name} has no exact sampler")

    def __repr__(self):
        return f"{type(self).__name__}()"


class IsotropicGaussian(DensityModel):
    """N(theta, sigma2 I) with known variance; theta is the mean."""

    name = "isotropic_gaussian"
    linear_in_theta = True

    def __init__(self, dim=1, sigma2=1.0):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        self.input_dim = self.param_dim = int(dim)
        self.sigma2 = float(sigma2)

    def _log_unnorm(self, theta, X):
        return -0.5 * ((X - theta) ** 2).sum(axis=1) / self.sigma2

    def _score_x(self, theta, X):
        return -(X - theta) / self.sigma2

    def _mixed_grad(self, theta, X):
        eye = np.eye(self.input_dim) / self.sigma2
        return np.broadcast_to(eye, (X.shape[0],) + eye.shape).copy()

    def _laplacian_x(self, theta, X):
        return np.full(X.shape[0], -self.input_dim / self.sigma2)

    def _score_theta(self, theta, X):
        return (X - theta) / self.sigma2

    def _log_density(self, theta, X):
        return self._log_unnorm(theta, X) - 0.5 * self.input_dim * np.log(2 * np.pi * self.sigma2)

    def _sample(self, theta, n, rng):
        return theta + np.sqrt(self.sigma2) * rng.standard_normal((n, self.input_dim))

    def default_theta(self, X):
        return np.asarray(X, float).mean(axis=0)

    def __repr__(self):
        return f"IsotropicGaussian(dim={self.input_dim}, sigma2={self.sigma2})"


class GammaRate(DensityModel):
    """Gamma(shape k, rate theta) with k fixed: log p_bar = (k-1) log x - theta x."""

    name = "gamma_rate"
    linear_in_theta = True
    support_1d = (0.0, np.inf)

    def __init__(self, shape=5.0):
        if shape <= 0:
            raise ValueError("shape must be positive")
        self.shape = float(shape)
        self.param_domain = (np.array([1e-6]), np.array([1e6]))

    def _in_support(self, X):
        return X[:, 0] > 0

    def _log_unnorm(self, theta, X):
        x = X[:, 0]
        return (self.shape - 1.0) * np.log(x) - theta[0] * x

    def _score_x(self, theta, X):
        return (self.shape - 1.0) / X - theta[0]

    def _mixed_grad(self, theta, X):
        return np.full((X.shape[0], 1, 1), -1.0)

    def _laplacian_x(self, theta, X):
        return -(self.shape - 1.0) / X[:, 0] ** 2

    def _score_theta(self, theta, X):
        return self.shape / theta[0] - X

    def _log_density(self, theta, X):
        return self._log_unnorm(theta, X) + self.shape * np.log(theta[0]) - gammaln(self.shape)

    def _sample(self, theta, n, rng):
        return rng.gamma(self.shape, 1.0 / theta[0], size=(n, 1))

    def default_theta(self, X):
        return np.array([self.shape / np.asarray(X, float).mean()])

    def __repr__(self):
        return f"GammaRate(shape={self.shape})"


class GaussianMixtureLoc(DensityModel):
    """weight * N(theta, 1) + (1 - weight) * N(other_mean, 1); theta is the free location."""

    name = "gaussian_mixture_loc"

    def __init__(self, other_mean=1.0, weight=0.5):
        if not 0.0 < weight < 1.0:
            raise ValueError("weight must lie in (0, 1)")
        self.other_mean = float(other_mean)
        self.weight = float(weight)

    def _resp(self, theta, x):
        # posterior weight of the free component
        z = np.log(self.weight) - np.log1p(-self.weight) - 0.5 * (x - theta) ** 2 + 0.5 * (x - self.other_mean) ** 2
        return expit(z)

    def _log_unnorm(self, theta, X):
        x = X[:, 0]
        a = np.log(self.weight) - 0.5 * (x - theta[0]) ** 2
        b = np.log1p(-self.weight) - 0.5 * (x - self.other_mean) ** 2
        return np.logaddexp(a, b) - 0.5 * np.log(2 * np.pi)

    def _score_x(self, theta, X):
        x = X[:, 0]
        w = self._resp(theta[0], x)
        m = self.other_mean
        return (-(x - m) - w * (m - theta[0]))[:, None]

    def _mixed_grad(self, theta, X):
        x = X[:, 0]
        t = theta[0]
        w = self._resp(t, x)
        g = w - w * (1.0 - w) * (x - t) * (self.other_mean - t)
        return g[:, None, None]

    def _laplacian_x(self, theta, X):
        x = X[:, 0]
        w = self._resp(theta[0], x)
        return -1.0 + (self.other_mean - theta[0]) ** 2 * w * (1.0 - w)

    def _score_theta(self, theta, X):
        x = X[:, 0]
        return (self._resp(theta[0], x) * (x - theta[0]))[:, None]

    def _log_density(self, theta, X):
        return self._log_unnorm(theta, X)

    def _sample(self, theta, n, rng):
        pick = rng.random(n) < self.weight
        loc = np.where(pick, theta[0], self.other_mean)
        return (loc + rng.standard_normal(n))[:, None]

    def default_theta(self, X):
        mean = np.asarray(X, float).mean()
        return np.array([(mean - (1.0 - self.weight) * self.other_mean) / self.weight])

    def __repr__(self):
        return f"GaussianMixtureLoc(other_mean={self.other_mean}, weight={self.weight})"


class AffineExpFamily(DensityModel):
    """log p_bar(x; theta) = eta(theta)^T psi(x) with eta(theta) = eta0 + B theta."""

    name = "exp_family"
    linear_in_theta = True

    def __init__(self, psi: FeatureFunction, input_dim, eta0=None, B=None):
        self.psi = psi
        self.input_dim = int(input_dim)
        k = psi.out_dim(self.input_dim)
        self.eta0 = np.zeros(k) if eta0 is None else np.asarray(eta0, dtype=float)
        self.B = np.eye(k) if B is None else np.asarray(B, dtype=float)
        if self.eta0.shape != (k,) or self.B.shape[0] != k:
            raise ValueError("eta0 / B do not match the sufficient statistic dimension")
        self.param_dim = self.B.shape[1]

    def eta(self, theta):
        return self.eta0 + self.B @ theta

    def _log_unnorm(self, theta, X):
        return self.psi.eval(X) @ self.eta(theta)

    def _score_x(self, theta, X):
        return np.einsum("nkd,k->nd", self.psi.jac_x(X), self.eta(theta))

    def _mixed_grad(self, theta, X):
        return np.einsum("kp,nkd->npd", self.B, self.psi.jac_x(X))

    def _laplacian_x(self, theta, X):
        return self.psi.hess_trace(X) @ self.eta(theta)


class GenericExpFamily(AffineExpFamily):
    """Exponential family in canonical form, eta(theta) = theta."""

    name = "generic_exp_family"

    def __init__(self, psi, input_dim):
        super().__init__(psi, input_dim)

    def __repr__(self):
        return f"GenericExpFamily(psi={self.psi.name}, input_dim={self.input_dim})"


class TanhExpFamily(AffineExpFamily):
    """Five-dimensional intractable family with tanh sufficient statistics.

    eta(theta) = [-.5, .6, .2, 0, 0, 0, theta_1, theta_2] against
    psi(x) = [sum x_i^2, x_1 x_2, sum_{i>=3} x_1 x_i, tanh(x_1..x_5)].
    At theta = 0 the density is the Gaussian exp(-x^T A x / 2).
    """

    name = "tanh_exp_family"

    def __init__(self):
        d = 5
        eta0 = np.array([-0.5, 0.6, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0])
        B = np.zeros((8, 2))
        B[6, 0] = 1.0
        B[7, 1] = 1.0
        super().__init__(TanhExpStatistic(), d, eta0, B)
        self._chol = None

    def precision_at_zero(self):
        """A with log p_bar(x; 0) = -x^T A x / 2, read off the (linear) score."""
        E = np.eye(self.input_dim)
        A = -self._score_x(np.zeros(self.param_dim), E).T
        return 0.5 * (A + A.T)

    def _sample(self, theta, n, rng):
        if np.any(theta != 0.0):
            raise CapabilityMissing("TanhExpFamily is only exactly samplable at theta = 0")
        if self._chol is None:
            A = self.precision_at_zero()
            ev = np.linalg.eigvalsh(A)
            if ev.min() <= 0:
                raise ParamError("precision matrix at theta = 0 is not positive definite")
            self._chol = np.linalg.cholesky(np.linalg.inv(A))
        return rng.standard_normal((n, self.input_dim)) @ self._chol.T

    def __repr__(self):
        return "TanhExpFamily()"


MODELS = {
    "isotropic_gaussian": IsotropicGaussian,
    "gamma_rate": GammaRate,
    "gaussian_mixture_loc": GaussianMixtureLoc,
    "tanh_exp_family": TanhExpFamily,
    "generic_exp_family": GenericExpFamily,
}


def make_model(name, **fixed):
    try:
        cls = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    return cls(**fixed)


# -- single-point operations -------------------------------------------------


def _point(model, x):
    return np.asarray(x, dtype=float).reshape(1, model.input_dim)


def log_unnorm(model, theta, x):
    return float(model.log_unnorm(theta, _point(model, x))[0])


def score_x(model, theta, x):
    return model.score_x(theta, _point(model, x))[0]


def mixed_grad(model, theta, x):
    return model.mixed_grad(theta, _point(model, x))[0]


def laplacian_x(model, theta, x):
    return float(model.laplacian_x(theta, _point(model, x))[0])


def mixed_grad_fd(model, theta, X):
    """Finite-difference mixed gradient, bypassing any closed form."""
    return DensityModel._mixed_grad(model, model.check_theta(theta), model.check_data(X))


def laplacian_x_fd(model, theta, X):
    return DensityModel._laplacian_x(model, model.check_theta(theta), model.check_data(X))
