#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Times the three hot paths (bilinear resize, RBF kernel matrix, SMO solve)
on pipeline-shaped workloads and prints a side-by-side table. Run:

    python benchmarks/bench_kernels.py [--repeats N]

Both variants are imported directly, so the ABRSVM_DISABLE_NUMBA flag is
irrelevant here; numba timings exclude the one-off JIT compile (warmup).
"""

import argparse
import time

import numpy as np

from abrsvm import _kernels


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_resize(repeats):
    rng = np.random.default_rng(0)
    src = np.ascontiguousarray(rng.integers(0, 256, (1950, 2350, 3)).astype(np.float64))
    _kernels.resize_numba(src, 224, 224)  # compile
    t_nb = timeit(lambda: _kernels.resize_numba(src, 224, 224), repeats)
    t_np = timeit(lambda: _kernels.resize_numpy(src, 224, 224), repeats)
    return "bilinear_resize 1950x2350 -> 224", t_nb, t_np


def bench_kmatrix(repeats):
    rng = np.random.default_rng(1)
    X = np.ascontiguousarray(rng.normal(size=(150, 2048)))
    _kernels.kmatrix_numba(X, 1, 1e-3)
    t_nb = timeit(lambda: _kernels.kmatrix_numba(X, 1, 1e-3), repeats)
    t_np = timeit(lambda: _kernels.kmatrix_numpy(X, 1, 1e-3), repeats)
    return "rbf kernel matrix 150x2048", t_nb, t_np


def bench_smo(repeats):
    rng = np.random.default_rng(2)
    n, d = 150, 64
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    y = np.hstack([-np.ones(n // 2), np.ones(n - n // 2)])
    X = y[:, None] * 2.0 * u + rng.normal(size=(n, d))
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    K = np.ascontiguousarray(_kernels.kmatrix_numpy(X, 1, 1.0 / d))
    C = np.ones(n)
    _kernels.smo_numba(K, y, C, 1e-3, 10 * n * n)
    t_nb = timeit(lambda: _kernels.smo_numba(K, y, C, 1e-3, 10 * n * n), repeats)
    t_np = timeit(lambda: _kernels.smo_numpy(K, y, C, 1e-3, 10 * n * n), repeats)
    a_nb = _kernels.smo_numba(K, y, C, 1e-3, 10 * n * n)[0]
    a_np = _kernels.smo_numpy(K, y, C, 1e-3, 10 * n * n)[0]
    drift = float(np.max(np.abs(a_nb - a_np)))
    return f"smo solve n=150 (paths agree to {drift:.1e})", t_nb, t_np


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="timing repetitions (best-of)")
    args = parser.parse_args()

    rows = [bench(args.repeats) for bench in (bench_resize, bench_kmatrix, bench_smo)]
    width = max(len(r[0]) for r in rows)
    print(f"{'workload':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, t_nb, t_np in rows:
        print(f"{name:<{width}}  {t_nb * 1e3:>8.2f}ms  {t_np * 1e3:>8.2f}ms  {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
