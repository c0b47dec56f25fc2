"""Timing of the compiled kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel and backend plus the largest
difference between the two results.  Compilation is triggered once before
timing.
"""

import argparse
import time

import numpy as np

from steinfit import _kernels as K


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    n, b, d = 20_000, 4, 5
    score = rng.standard_normal((n, d))
    jac = rng.standard_normal((n, b, d))
    lap = rng.standard_normal((n, b))
    mixed = rng.standard_normal((n, 2, d))
    T = rng.standard_normal((n, b))
    delta = 0.01 * rng.standard_normal(b)
    X = rng.standard_normal((5_000, 1))
    S = -X
    return [
        ("stein_contract n=2e4", lambda: K.stein_contract_numpy(score, jac, lap),
         lambda: K.stein_contract_numba(score, jac, lap)),
        ("stein_grad_contract n=2e4", lambda: K.stein_grad_contract_numpy(mixed, jac),
         lambda: K.stein_grad_contract_numba(mixed, jac)),
        ("sdre_terms n=2e4 b=4", lambda: K.sdre_terms_numpy(T, delta), lambda: K.sdre_terms_numba(T, delta)),
        ("ksd_vstat n=5e3 d=1", lambda: K.ksd_vstat_numpy(X, S, 2, 1.0), lambda: K.ksd_vstat_numba(X, S, 2, 1.0)),
    ]


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, ref, fast in cases(rng):
        fast()  # compile (or load from cache)
        t_np, a = best_of(ref, args.repeat)
        t_nb, b = best_of(fast, args.repeat)
        print(f"{name:28s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.1f} {_diff(a, b):11.2e}")


if __name__ == "__main__":
    main()
