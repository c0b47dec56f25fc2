"""Feature functions and the Stein operator built on top of them.

A feature maps a point x in R^d to f(x) in R^b.  For every output f_i the Stein
feature is

    T f_i(x) = <grad_x log p(x; theta), grad_x f_i(x)> + trace(hess_x f_i(x)),

which only needs the model's input-space score, so the normalizer never
enters.  All feature methods are batched: they take ``X`` of shape (n, d).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyData, SteinfitError


class FeatureFunction:
    """Vector-valued feature with input Jacobian and per-output Laplacian."""

    name = "feature"

    def out_dim(self, d):
        raise NotImplementedError

    def eval(self, X):
        raise NotImplementedError

    def jac_x(self, X):
        """Shape (n, b, d); row k holds grad_x f_k."""
        raise NotImplementedError

    def hess_trace(self, X):
        """Shape (n, b); entry k is trace of the Hessian of f_k."""
        raise NotImplementedError

    def __mul__(self, c):
        return Scaled(self, c)

    __rmul__ = __mul__


class Identity(FeatureFunction):
    name = "identity"

    def out_dim(self, d):
        return d

    def eval(self, X):
        return np.array(X, dtype=float)

    def jac_x(self, X):
        n, d = X.shape
        return np.broadcast_to(np.eye(d), (n, d, d)).copy()

    def hess_trace(self, X):
        return np.zeros(X.shape)


class HalfSquare(FeatureFunction):
    name = "half_square"

    def out_dim(self, d):
        return d

    def eval(self, X):
        return 0.5 * X**2

    def jac_x(self, X):
        n, d = X.shape
        J = np.zeros((n, d, d))
        idx = np.arange(d)
        J[:, idx, idx] = X
        return J

    def hess_trace(self, X):
        return np.ones(X.shape)


class PolyPair(FeatureFunction):
    """[x, x^2] coordinatewise; all linear terms first, then all squares."""

    name = "poly_pair"

    def out_dim(self, d):
        return 2 * d

    def eval(self, X):
        return np.hstack([X, X**2])

    def jac_x(self, X):
        n, d = X.shape
        J = np.zeros((n, 2 * d, d))
        idx = np.arange(d)
        J[:, idx, idx] = 1.0
        J[:, d + idx, idx] = 2.0 * X
        return J

    def hess_trace(self, X):
        n, d = X.shape
        return np.hstack([np.zeros((n, d)), np.full((n, d), 2.0)])


class Tanh(FeatureFunction):
    name = "tanh"

    def out_dim(self, d):
        return d

    def eval(self, X):
        return np.tanh(X)

    def jac_x(self, X):
        n, d = X.shape
        J = np.zeros((n, d, d))
        idx = np.arange(d)
        J[:, idx, idx] = 1.0 - np.tanh(X) ** 2
        return J

    def hess_trace(self, X):
        th = np.tanh(X)
        return -2.0 * th * (1.0 - th**2)


class Constant(FeatureFunction):
    """f(x) = c.  Its Stein feature is identically zero."""

    name = "constant"

    def __init__(self, value=1.0):
        self.value = float(value)

    def out_dim(self, d):
        return 1

    def eval(self, X):
        return np.full((X.shape[0], 1), self.value)

    def jac_x(self, X):
        return np.zeros((X.shape[0], 1, X.shape[1]))

    def hess_trace(self, X):
        return np.zeros((X.shape[0], 1))


class Concat(FeatureFunction):
    name = "concat"

    def __init__(self, *parts):
        if not parts:
            raise ValueError("Concat needs at least one feature")
        self.parts = parts

    def out_dim(self, d):
        return sum(p.out_dim(d) for p in self.parts)

    def eval(self, X):
        return np.hstack([p.eval(X) for p in self.parts])

    def jac_x(self, X):
        return np.concatenate([p.jac_x(X) for p in self.parts], axis=1)

    def hess_trace(self, X):
        return np.hstack([p.hess_trace(X) for p in self.parts])


class Scaled(FeatureFunction):
    def __init__(self, base, c):
        self.base = base
        self.c = float(c)
        self.name = f"{self.c:g}*{base.name}"

    def out_dim(self, d):
        return self.base.out_dim(d)

    def eval(self, X):
        return self.c * self.base.eval(X)

    def jac_x(self, X):
        return self.c * self.base.jac_x(X)

    def hess_trace(self, X):
        return self.c * self.base.hess_trace(X)


class TanhExpStatistic(FeatureFunction):
    """psi(x) = [sum x_i^2, x_1 x_2, sum_{i>=3} x_1 x_i, tanh(x_1), ..., tanh(x_d)]."""

    name = "tanh_exp_statistic"

    def out_dim(self, d):
        return 3 + d

    def eval(self, X):
        x1 = X[:, 0]
        return np.column_stack([
            (X**2).sum(axis=1),
            x1 * X[:, 1],
            x1 * X[:, 2:].sum(axis=1),
            np.tanh(X),
        ])

    def jac_x(self, X):
        n, d = X.shape
        J = np.zeros((n, 3 + d, d))
        J[:, 0, :] = 2.0 * X
        J[:, 1, 0] = X[:, 1]
        J[:, 1, 1] = X[:, 0]
        J[:, 2, 0] = X[:, 2:].sum(axis=1)
        J[:, 2, 2:] = X[:, [0]]
        idx = np.arange(d)
        J[:, 3 + idx, idx] = 1.0 - np.tanh(X) ** 2
        return J

    def hess_trace(self, X):
        n, d = X.shape
        th = np.tanh(X)
        return np.column_stack([
            np.full(n, 2.0 * d),
            np.zeros(n),
            np.zeros(n),
            -2.0 * th * (1.0 - th**2),
        ])


class Tabulated(FeatureFunction):
    """Feature whose Jacobians and Laplacians were computed elsewhere.

    Only evaluable at the exact points it was tabulated on, which is all DLE
    needs.  This is the hook for externally trained feature maps.
    """

    name = "tabulated"

    def __init__(self, points, jac, lap, values=None):
        self.points = np.asarray(points, dtype=float)
        self.jac = np.asarray(jac, dtype=float)
        self.lap = np.asarray(lap, dtype=float)
        self.values = None if values is None else np.asarray(values, dtype=float)
        n, d = self.points.shape
        if self.jac.shape[0] != n or self.jac.shape[2] != d or self.lap.shape != self.jac.shape[:2]:
            raise ValueError("tabulated arrays have inconsistent shapes")

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            return cls(f["x"], f["jac"], f["lap"], f["value"] if "value" in f else None)

    def out_dim(self, d):
        return self.jac.shape[1]

    def _check(self, X):
        if X.shape != self.points.shape or not np.array_equal(X, self.points):
            raise SteinfitError("tabulated feature evaluated away from its tabulation points")

    def eval(self, X):
        self._check(X)
        if self.values is None:
            raise SteinfitError("tabulated feature has no stored values")
        return self.values

    def jac_x(self, X):
        self._check(X)
        return self.jac

    def hess_trace(self, X):
        self._check(X)
        return self.lap


FEATURES = {
    "identity": Identity,
    "half_square": HalfSquare,
    "poly_pair": PolyPair,
    "tanh": Tanh,
    "constant": Constant,
    "tanh_exp_statistic": TanhExpStatistic,
}


def make_feature(name, model=None, **kwargs):
    """Build a feature from its registry name.

    ``"sufficient_stat"`` resolves to the sufficient statistic of ``model``;
    ``"a+b"`` concatenates registered features.
    """
    if name == "sufficient_stat":
        psi = getattr(model, "psi", None)
        if psi is None:
            raise KeyError("sufficient_stat needs an exponential-family model")
        return psi
    if "+" in name:
        return Concat(*(make_feature(part.strip(), model) for part in name.split("+")))
    try:
        cls = FEATURES[name]
    except KeyError:
        raise KeyError(f"unknown feature {name!r}; known: {sorted(FEATURES)}") from None
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# Stein features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureTable:
    """Theta-independent feature derivatives on a fixed data set."""

    jac: np.ndarray  # (n, b, d)
    lap: np.ndarray  # (n, b)


@dataclass(frozen=True)
class SteinFeatureMatrix:
    T: np.ndarray  # (n, b)
    theta_used: np.ndarray

    @property
    def shape(self):
        return self.T.shape


def as_data(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("data must be a matrix of shape (n, d)")
    if X.shape[0] == 0:
        raise EmptyData("no data rows")
    return X


def tabulate(feature, X):
    return FeatureTable(np.asarray(feature.jac_x(X), float), np.asarray(feature.hess_trace(X), float))


def stein_feature(model, theta, feature, x):
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return stein_feature_matrix(model, theta, feature, x, check_scaling=False).T[0]


def stein_feature_matrix(model, theta, feature, X, table=None, check_scaling=True):
    X = as_data(X)
    theta = model.check_theta(theta)
    score = model.score_x(theta, X)
    if table is None:
        table = tabulate(feature, X)
    T = _kernels.stein_contract(score, table.jac, table.lap)
    if not np.all(np.isfinite(T)):
        raise SteinfitError("non-finite Stein feature")
    if check_scaling:
        _warn_on_scaling(T)
    return SteinFeatureMatrix(T, theta.copy())


def stein_feature_grad_theta(model, theta, feature, x):
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return stein_feature_grad_theta_matrix(model, theta, feature, x)[0]


def stein_feature_grad_theta_matrix(model, theta, feature, X, table=None):
    """Shape (n, p, b): entry [i, a, k] = d/d theta_a of T f_k(x_i)."""
    X = as_data(X)
    theta = model.check_theta(theta)
    if table is None:
        table = tabulate(feature, X)
    return _kernels.stein_grad_contract(model.mixed_grad(theta, X), table.jac)


def _warn_on_scaling(T):
    norms = np.sqrt((T**2).sum(axis=0))
    pos = norms[norms > 0]
    if pos.size >= 2 and pos.max() > 1e6 * pos.min():
        warnings.warn(
            f"Stein feature column norms span {pos.max() / pos.min():.1e}; consider rescaling the feature",
            RuntimeWarning,
            stacklevel=3,
        )
