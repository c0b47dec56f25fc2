"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment variable
``STEINFIT_DISABLE_NUMBA`` is unset (or set to ``0``).  Both paths reduce in a
fixed order, so each one is bitwise reproducible on its own; the two paths agree
to rounding error only.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_disabled():
    return os.environ.get("STEINFIT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


NUMBA_ENABLED = HAVE_NUMBA and not _env_disabled()


def backend():
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def stein_contract_numpy(score, jac, lap):
    # score (n, d), jac (n, b, d), lap (n, b) -> (n, b)
    return np.einsum("na,nka->nk", score, jac) + lap


def stein_grad_contract_numpy(mixed, jac):
    # mixed (n, p, d), jac (n, b, d) -> (n, p, b)
    return np.einsum("npa,nka->npk", mixed, jac)


def sdre_terms_numpy(T, delta):
    """Mean log ratio, its gradient and Hessian in delta.

    Returns ``(value, grad, hess, rmin)``; when ``rmin <= 0`` the value is -inf
    and grad/hess are undefined (filled with nan).
    """
    n, b = T.shape
    r = T @ delta + 1.0
    rmin = float(r.min())
    if not rmin > 0.0:
        nan = np.full(b, np.nan)
        return -np.inf, nan, np.full((b, b), np.nan), rmin
    W = T / r[:, None]
    value = float(np.log(r).sum() / n)
    grad = W.sum(axis=0) / n
    hess = -(W.T @ W) / n
    return value, grad, hess, rmin


def ksd_vstat_numpy(X, S, degree, offset, chunk=256):
    """V-statistic of the kernel Stein discrepancy with a polynomial kernel."""
    n, d = X.shape
    xs = np.einsum("na,na->n", X, S)
    total = 0.0
    for start in range(0, n, chunk):
        Xc = X[start:start + chunk]
        Sc = S[start:start + chunk]
        G = Xc @ X.T + offset
        SS = Sc @ S.T
        XX = Xc @ X.T
        Gm1 = G ** (degree - 1)
        u = SS * G ** degree
        u += degree * Gm1 * (xs[start:start + chunk, None] + xs[None, :])
        if degree >= 2:
            u += degree * (degree - 1) * G ** (degree - 2) * XX
        u += degree * d * Gm1
        total += float(u.sum())
    return total / (n * n)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def stein_contract_numba(score, jac, lap):
        n, b, d = jac.shape
        out = np.empty((n, b))
        for i in range(n):
            for k in range(b):
                acc = lap[i, k]
                for a in range(d):
                    acc += score[i, a] * jac[i, k, a]
                out[i, k] = acc
        return out

    @numba.njit(cache=True)
    def stein_grad_contract_numba(mixed, jac):
        n, p, d = mixed.shape
        b = jac.shape[1]
        out = np.zeros((n, p, b))
        for i in range(n):
            for q in range(p):
                for k in range(b):
                    acc = 0.0
                    for a in range(d):
                        acc += mixed[i, q, a] * jac[i, k, a]
                    out[i, q, k] = acc
        return out

    @numba.njit(cache=True)
    def _sdre_terms_numba(T, delta):
        n, b = T.shape
        grad = np.zeros(b)
        hess = np.zeros((b, b))
        value = 0.0
        rmin = np.inf
        for i in range(n):
            r = 1.0
            for k in range(b):
                r += T[i, k] * delta[k]
            if r < rmin:
                rmin = r
            if r <= 0.0:
                continue
            value += np.log(r)
            inv = 1.0 / r
            for k in range(b):
                wk = T[i, k] * inv
                grad[k] += wk
                for m in range(k + 1):
                    hess[k, m] -= wk * T[i, m] * inv
        for k in range(b):
            grad[k] /= n
            for m in range(k + 1):
                hess[k, m] /= n
                hess[m, k] = hess[k, m]
        return value / n, grad, hess, rmin

    def sdre_terms_numba(T, delta):
        value, grad, hess, rmin = _sdre_terms_numba(T, delta)
        if not rmin > 0.0:
            b = T.shape[1]
            return -np.inf, np.full(b, np.nan), np.full((b, b), np.nan), float(rmin)
        return float(value), grad, hess, float(rmin)

    @numba.njit(cache=True, inline="always")
    def _ipow(g, k):
        out = 1.0
        for _ in range(k):
            out *= g
        return out

    @numba.njit(cache=True)
    def _ksd_vstat_numba(X, S, degree, offset):
        n, d = X.shape
        xs = np.empty(n)
        for i in range(n):
            acc = 0.0
            for a in range(d):
                acc += X[i, a] * S[i, a]
            xs[i] = acc
        c2 = degree * (degree - 1)
        diag = 0.0
        off = 0.0
        # symmetric kernel: diagonal once, each off-diagonal pair twice
        for i in range(n):
            row = 0.0
            for j in range(i, n):
                dot_x = 0.0
                dot_s = 0.0
                for a in range(d):
                    dot_x += X[i, a] * X[j, a]
                    dot_s += S[i, a] * S[j, a]
                g = dot_x + offset
                gm2 = _ipow(g, degree - 2) if degree >= 2 else 0.0
                gm1 = gm2 * g if degree >= 2 else 1.0
                u = dot_s * gm1 * g + degree * gm1 * (xs[i] + xs[j] + d) + c2 * gm2 * dot_x
                if j == i:
                    diag += u
                else:
                    row += u
            off += row
        return (diag + 2.0 * off) / (n * n)

    def ksd_vstat_numba(X, S, degree, offset):
        return float(_ksd_vstat_numba(X, S, int(degree), float(offset)))


def _pick(name):
    if NUMBA_ENABLED:
        return globals()[name + "_numba"]
    return globals()[name + "_numpy"]


def _as_f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def stein_contract(score, jac, lap):
    return _pick("stein_contract")(*_as_f64(score, jac, lap))


def stein_grad_contract(mixed, jac):
    return _pick("stein_grad_contract")(*_as_f64(mixed, jac))


def sdre_terms(T, delta):
    return _pick("sdre_terms")(*_as_f64(T, delta))


def ksd_vstat(X, S, degree, offset):
    X, S = _as_f64(X, S)
    return _pick("ksd_vstat")(X, S, int(degree), float(offset))
