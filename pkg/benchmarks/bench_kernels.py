"""Compare the compiled and numpy covariance kernels, and the dense vs Kronecker likelihood.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from mogp_longevity._core import _pykernels
from mogp_longevity.data import grid_panel
from mogp_longevity.gp import MeanSpec, log_marginal_likelihood
from mogp_longevity.kernels import KernelSpec

try:
    from mogp_longevity._core import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _inputs(L, n_ag, n_yr):
    ages, years = np.arange(70.0, 70 + n_ag), np.arange(1990.0, 1990 + n_yr)
    P, T, A = np.meshgrid(np.arange(L), years, ages, indexing="ij")
    rng = np.random.default_rng(0)
    G = rng.standard_normal((L, L))
    return (np.ascontiguousarray(A.ravel()), np.ascontiguousarray(T.ravel()),
            np.ascontiguousarray(P.ravel(), dtype=np.intp), G @ G.T + L * np.eye(L))


def bench_backends(repeat: int) -> None:
    print("covariance assembly, C = P[l,l'] * SE(age, year)")
    print(f"{'M':>6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for L, n_ag, n_yr in [(1, 15, 24), (3, 15, 24), (6, 15, 24), (8, 15, 27)]:
        a, t, p, P = _inputs(L, n_ag, n_yr)
        args = (a, t, p, 1 / 15.0 ** 2, 1 / 10.0 ** 2, P)
        t_py = min(timeit.repeat(lambda: _pykernels.cov_sym(*args), number=1, repeat=repeat))
        line = f"{len(a):>6} {1e3 * t_py:>10.2f}"
        if _ckernels is not None:
            t_c = min(timeit.repeat(lambda: _ckernels.cov_sym(*args), number=1, repeat=repeat))
            diff = np.abs(_ckernels.cov_sym(*args) - _pykernels.cov_sym(*args)).max()
            line += f" {1e3 * t_c:>10.2f} {t_py / t_c:>8.1f} {diff:>11.2e}"
        else:
            line += f" {'n/a':>10}"
        print(line)


def bench_solvers(repeat: int) -> None:
    print("\nlog marginal likelihood on isotropic panels")
    print(f"{'L':>3} {'M':>6} {'dense ms':>10} {'kron ms':>10} {'|diff|':>10}")
    rng = np.random.default_rng(1)
    for L, n_ag, n_yr in [(3, 4, 5), (3, 15, 24), (8, 15, 27)]:
        ages, years = np.arange(70.0, 70 + n_ag), np.arange(1990.0, 1990 + n_yr)
        y = -4 + 0.05 * rng.standard_normal((L, n_yr, n_ag))
        panel = grid_panel([f"P{i}" for i in range(L)], ages, years, y)
        A = 0.2 * rng.standard_normal((L, 2))
        k = KernelSpec("ICM", 12.0, 9.0, np.full(L, 2e-3), A=A)
        res = {}
        for method in ("dense", "kronecker"):
            res[method] = log_marginal_likelihood(panel, k, MeanSpec(1), method=method)
            res[method + "_t"] = min(timeit.repeat(
                lambda: log_marginal_likelihood(panel, k, MeanSpec(1), method=method),
                number=1, repeat=repeat))
        print(f"{L:>3} {panel.M:>6} {1e3 * res['dense_t']:>10.2f} "
              f"{1e3 * res['kronecker_t']:>10.2f} {abs(res['dense'] - res['kronecker']):>10.2e}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    bench_backends(args.repeat)
    bench_solvers(args.repeat)


if __name__ == "__main__":
    main()
