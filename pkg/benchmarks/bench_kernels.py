"""Time the numba and numpy variants of the hot kernels side by side.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once per backend before timing so numba compilation
is excluded.  The backends are switched with the SUBDIFF_NUMBA flag, which
the dispatchers read on every call.
"""
from __future__ import annotations

import argparse
import os
import time

import numpy as np

from subdiff import kernels
from subdiff._accel import HAVE_NUMBA
from subdiff.forward import assemble, cq_weights, excitation_samples, free_count
from subdiff.coefficients import CoefficientField
from subdiff.problem import DD, Discretization, Excitation, ProblemSpec
from subdiff.sturm_liouville import make_grid


def _problem():
    q = CoefficientField.from_function(lambda x: 10 * x * (1 - x) ** 2, 2001)
    rho = CoefficientField.piecewise([0.5], [1.0, 1.5])
    return ProblemSpec(0.75, 1.0, rho, q, DD, Excitation.indicator(0.5), 1.0)


def _cases():
    p = _problem()
    disc = Discretization(100, 1000)
    b = cq_weights(p.alpha, disc.n_time, disc.tau(p.T))
    M, S = assemble(p, disc)
    g = excitation_samples(p, disc)
    m = free_count(p, disc)
    lam = np.linspace(10.0, 4e4, 99)
    grid = make_grid(p.q, p.rho, p.ell, 2000)
    rng = np.random.default_rng(0)
    lo, up = rng.uniform(-1, 0, 2000), rng.uniform(-1, 0, 2000)
    di = 3.0 + rng.uniform(0, 1, 2000)
    rhs = rng.standard_normal(2000)
    return {
        "cq_march (N=1000, 99 dofs)": lambda: kernels.cq_march(b, M, S, g, m),
        "resolvent_kernels (99 modes)": lambda: kernels.resolvent_kernels(b, lam),
        "sl_angle (2000 cells)": lambda: kernels.sl_angle(250.0, grid.q, grid.rho, grid.d),
        "sl_profile (2000 cells)": lambda: kernels.sl_profile(250.0, grid.q, grid.rho, grid.d),
        "tridiag_solve (n=2000)": lambda: kernels.tridiag_solve(lo, di, up, rhs),
    }


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy column is meaningful")
    cases = _cases()
    saved = os.environ.get("SUBDIFF_NUMBA")
    print(f"{'kernel':32s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    try:
        for name, fn in cases.items():
            os.environ["SUBDIFF_NUMBA"] = "1"
            t_nb = _time(fn, args.repeat)
            os.environ["SUBDIFF_NUMBA"] = "0"
            t_np = _time(fn, args.repeat)
            print(f"{name:32s} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.1f}")
    finally:
        if saved is None:
            os.environ.pop("SUBDIFF_NUMBA", None)
        else:
            os.environ["SUBDIFF_NUMBA"] = saved


if __name__ == "__main__":
    main()
