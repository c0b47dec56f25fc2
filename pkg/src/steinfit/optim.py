"""Quasi-Newton minimizer shared by the estimators.

BFGS on the inverse Hessian with Armijo backtracking.  A trial point is rejected
(and the step halved) when it leaves the feasible set, when the objective raises
a library error, or when it returns a non-finite value; this keeps iterates
inside parameter domains without projection.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SteinfitError


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    nfev: int
    converged: bool
    message: str


def bfgs_armijo(fun_and_grad, x0, gtol=1e-6, max_iter=500, feasible=None, H0=None,
                c1=1e-4, max_step=None, max_halvings=60):
    """Minimize ``fun_and_grad`` (returning ``(f, g)``) from ``x0``.

    Convergence is declared when the infinity norm of the gradient drops to
    ``gtol``.  Close to a minimum the Armijo decrease can fall below the
    rounding error of ``f``; a trial whose value is unchanged up to that noise
    is then accepted when it shrinks the gradient.  ``max_step`` caps the infinity norm of the first trial step of
    every line search.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    if feasible is not None and not feasible(x):
        raise SteinfitError("starting point is infeasible")
    f, g = fun_and_grad(x)
    nfev = 1
    if not np.isfinite(f):
        raise SteinfitError("objective is not finite at the starting point")
    H = np.eye(n) if H0 is None else np.array(H0, dtype=float)
    scaled = H0 is not None
    it = 0
    message = "max_iter reached"
    converged = False
    while True:
        gnorm = float(np.abs(g).max())
        if gnorm <= gtol:
            converged = True
            message = "gradient tolerance reached"
            break
        if it >= max_iter:
            break
        p = -H @ g
        slope = float(g @ p)
        if not slope < 0:
            H = np.eye(n)
            scaled = False
            p = -g
            slope = float(g @ p)
        alpha = 1.0
        if max_step is not None:
            pmax = float(np.abs(p).max())
            if pmax > max_step:
                alpha = max_step / pmax
        accepted = False
        noise = 64.0 * np.finfo(float).eps * max(1.0, abs(f))
        for _ in range(max_halvings):
            cand = x + alpha * p
            if feasible is None or feasible(cand):
                try:
                    cf, cg = fun_and_grad(cand)
                    nfev += 1
                except SteinfitError:
                    cf = np.inf
                if np.isfinite(cf) and cf <= f + c1 * alpha * slope:
                    accepted = True
                    break
                if np.isfinite(cf) and cf <= f + noise and np.linalg.norm(cg) < np.linalg.norm(g):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if scaled or not np.allclose(H, np.eye(n)):
                H = np.eye(n)
                scaled = False
                continue
            message = "line search failed"
            break
        s = cand - x
        y = cg - g
        sy = float(s @ y)
        x, f, g = cand, cf, cg
        it += 1
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = (sy / float(y @ y)) * np.eye(n)
                scaled = True
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
    return MinimizeResult(x, float(f), g, it, nfev, converged, message)
