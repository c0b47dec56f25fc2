"""Second-order quantities of the log likelihood-ratio and what is built on them.

Hessian blocks of l(delta, theta) = mean_i log r_theta(x_i; delta), the sandwich
covariance of sqrt(n) (theta_hat - theta*), confidence regions, the efficiency
variance for tractable models, the penalized-likelihood selection score and the
chi-square goodness-of-fit test.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import CapabilityMissing, DfError, InfeasiblePoint, NotPositiveDefinite, RankDeficient
from .features import (
    as_data,
    stein_feature_grad_theta_matrix,
    stein_feature_matrix,
    tabulate,
)
from .models import fd_step

COND_LIMIT = 1e12


@dataclass(frozen=True)
class HessianBlocks:
    H_dd: np.ndarray  # (b, b)
    H_dt: np.ndarray  # (b, p)
    H_tt: np.ndarray  # (p, p)
    delta: np.ndarray
    theta: np.ndarray

    @property
    def evaluated_at(self):
        return self.delta, self.theta

    def full(self):
        """The (b + p) square Hessian in (delta, theta) order."""
        return np.block([[self.H_dd, self.H_dt], [self.H_dt.T, self.H_tt]])


def _theta_grad(model, X, table, delta, theta):
    T = stein_feature_matrix(model, theta, None, X, table=table, check_scaling=False).T
    G = stein_feature_grad_theta_matrix(model, theta, None, X, table=table)
    r = T @ delta + 1.0
    return (G @ delta / r[:, None]).mean(axis=0)


def hessian_blocks(model, feature, X, delta, theta, table=None):
    X = model.check_data(X)
    theta = model.check_theta(theta)
    delta = np.asarray(delta, dtype=float)
    if table is None:
        table = tabulate(feature, X)
    n = X.shape[0]
    T = stein_feature_matrix(model, theta, feature, X, table=table, check_scaling=False).T
    G = stein_feature_grad_theta_matrix(model, theta, feature, X, table=table)
    r = T @ delta + 1.0
    if not r.min() > 0:
        raise InfeasiblePoint("ratio model is not positive on the data")
    W = T / r[:, None]
    H_dd = -(W.T @ W) / n
    grad_r = G @ delta  # (n, p) = d r_i / d theta
    H_dt = -((W / r[:, None]).T @ grad_r) / n + np.einsum("npb,n->bp", G, 1.0 / r) / n
    H_tt = -(grad_r / r[:, None]).T @ (grad_r / r[:, None]) / n
    if not model.linear_in_theta and np.any(delta != 0):
        # second theta-derivatives of the Stein features, by differencing the
        # analytic theta-gradient at fixed delta
        h = fd_step(theta)
        J = np.empty((theta.size, theta.size))
        for a in range(theta.size):
            e = np.zeros_like(theta)
            e[a] = h[a]
            J[:, a] = (_theta_grad(model, X, table, delta, theta + e) - _theta_grad(model, X, table, delta, theta - e)) / (2 * h[a])
        H_tt = 0.5 * (J + J.T)
    return HessianBlocks(H_dd, H_dt, H_tt, delta.copy(), theta.copy())


@dataclass
class CovarianceReport:
    V: np.ndarray
    theta_hat: np.ndarray
    n: int
    alpha: float
    marginal_ci: np.ndarray  # (p, 2)
    eig_min_H_dd: float
    eig_min_schur: float
    ellipse: dict = None

    def ellipse_polyline(self, level, num=256):
        """Boundary of the joint confidence region for sqrt(n)(theta - theta_hat), p = 2."""
        return ellipse_polyline(self.V, level, num)


def ellipse_polyline(V, level, num=256):
    V = np.asarray(V, dtype=float)
    if V.shape != (2, 2):
        raise ValueError("ellipse needs a 2 x 2 covariance")
    radius = np.sqrt(stats.chi2.ppf(level, 2))
    L = np.linalg.cholesky(V)
    angle = np.linspace(0.0, 2.0 * np.pi, num)
    circle = np.stack([np.cos(angle), np.sin(angle)])
    return (radius * L @ circle).T


def asymptotic_covariance(blocks, n, alpha=0.05):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    negHdd = -0.5 * (blocks.H_dd + blocks.H_dd.T)
    ev = np.linalg.eigvalsh(negHdd)
    if ev[-1] <= 0 or ev[0] <= ev[-1] / COND_LIMIT:
        raise RankDeficient(f"H_dd is numerically singular (eigenvalues {ev})")
    schur = blocks.H_dt.T @ np.linalg.solve(negHdd, blocks.H_dt)
    schur = 0.5 * (schur + schur.T)
    sev = np.linalg.eigvalsh(schur)
    if sev[0] <= sev[-1] / COND_LIMIT or sev[0] <= 0:
        raise NotPositiveDefinite("H_td H_dd^-1 H_dt is not negative definite", eigenvalues=sev)
    V = np.linalg.inv(schur)
    V = 0.5 * (V + V.T)
    theta = blocks.theta
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    half = z * np.sqrt(np.diag(V) / n)
    ci = np.column_stack([theta - half, theta + half])
    ellipse = None
    if theta.size == 2:
        ellipse = {
            "center": theta.copy(),
            "shape": V / n,
            "radius": float(np.sqrt(stats.chi2.ppf(1.0 - alpha, 2))),
        }
    return CovarianceReport(V, theta.copy(), int(n), float(alpha), ci, float(ev[0]), float(sev[0]), ellipse)


def assumption_diagnostics(blocks, model=None, X=None):
    """Eigenvalue report on the Hessian blocks; no pass/fail verdict."""
    negHdd = -0.5 * (blocks.H_dd + blocks.H_dd.T)
    ev = np.linalg.eigvalsh(negHdd)
    out = {
        "eig_min_H_dd": float(ev[0]),
        "eig_max_H_dd": float(ev[-1]),
        "eig_min_schur": float("nan"),
        "norm_H_tt": float(np.linalg.norm(blocks.H_tt, 2)) if blocks.H_tt.size else 0.0,
        "norm_H_td_Hdd_inv": float("nan"),
    }
    if ev[-1] > 0 and ev[0] > ev[-1] / COND_LIMIT:
        A = np.linalg.solve(negHdd, blocks.H_dt)
        schur = blocks.H_dt.T @ A
        out["eig_min_schur"] = float(np.linalg.eigvalsh(0.5 * (schur + schur.T))[0])
        out["norm_H_td_Hdd_inv"] = float(np.linalg.norm(A.T, 2))
    if model is not None and X is not None and model.linear_in_theta:
        M = model.mixed_grad(blocks.theta, X)  # (n, p, d)
        gram = np.einsum("npd,nqd->pq", M, M) / M.shape[0]
        out["eig_min_jac_gram"] = float(np.linalg.eigvalsh(gram)[0])
    return out


@dataclass
class EfficiencyReport:
    V_f: np.ndarray
    inv_fisher: np.ndarray
    batch_V_f: np.ndarray = field(repr=False)
    batch_inv_fisher: np.ndarray = field(repr=False)

    @property
    def V_f_stderr(self):
        k = self.batch_V_f.shape[0]
        return self.batch_V_f.std(axis=0, ddof=1) / np.sqrt(k)


def _efficiency(S, T):
    m = S.shape[0]
    E_st = S.T @ T / m
    E_tt = T.T @ T / m
    V_f = np.linalg.inv(E_st @ np.linalg.solve(E_tt, E_st.T))
    inv_fisher = np.linalg.inv(S.T @ S / m)
    return 0.5 * (V_f + V_f.T), 0.5 * (inv_fisher + inv_fisher.T)


def efficiency_variance(model, feature, theta_star, mc_samples, rng, batches=20):
    """Monte Carlo estimate of the asymptotic DLE variance for feature ``feature``.

    Needs exact sampling and the normalized score; also returns the inverse
    Fisher information from the same draws.  Batch estimates give a standard
    error, and identical seeds give paired comparisons across features.
    """
    if not (model.supports("score_theta") and model.supports("sample")):
        raise CapabilityMissing(f"{model.name} lacks a tractable score or an exact sampler")
    theta_star = model.check_theta(theta_star)
    X = model.sample(theta_star, mc_samples, rng)
    S = model.score_theta(theta_star, X)
    T = stein_feature_matrix(model, theta_star, feature, X, check_scaling=False).T
    V_f, inv_fisher = _efficiency(S, T)
    bV, bF = [], []
    for idx in np.array_split(np.arange(mc_samples), batches):
        v, f = _efficiency(S[idx], T[idx])
        bV.append(v)
        bF.append(f)
    return EfficiencyReport(V_f, inv_fisher, np.array(bV), np.array(bF))


def model_select_score(loglik_ratio, n, b, p):
    """Penalized likelihood n * l_hat - b + p (smaller is better)."""
    if loglik_ratio < 0:
        raise ValueError("log likelihood-ratio must be non-negative")
    return n * loglik_ratio - b + p


def select_model(scores):
    """Pick (model, feature) from ``{(model, feature): score}``.

    For each model the most critical feature (largest score) counts; the model
    whose worst case is smallest wins.
    """
    worst = {}
    for (m, f), s in scores.items():
        if m not in worst or s > worst[m][0]:
            worst[m] = (s, f)
    best = min(worst, key=lambda m: (worst[m][0], str(m)))
    return best, worst[best][1]


@dataclass(frozen=True)
class GofReport:
    statistic: float
    df: int
    p_value: float


def gof_test(loglik_ratio, n, b, p):
    if b <= p:
        raise DfError(f"goodness of fit needs b > dim(theta); got b={b}, p={p}")
    stat = max(2.0 * n * float(loglik_ratio), 0.0)
    df = int(b - p)
    return GofReport(stat, df, float(stats.chi2.sf(stat, df)))
