#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]
The two backends must agree numerically; this also asserts that.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedcondense.kernels import numba_backend, numpy_backend


def time_fn(fn, args_list, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for args in args_list:
            fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_vector_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for n in (8, 64, 512):
        vectors = [rng.normal(0, 2, size=n) for _ in range(200)]
        for name, np_fn, nb_fn in (
            ("sparsemax", numpy_backend.sparsemax, numba_backend.sparsemax),
            ("entmax15", numpy_backend.entmax15, numba_backend.entmax15),
        ):
            for z in vectors[:5]:  # warm numba compile + agreement check
                assert np.allclose(np_fn(z), nb_fn(z), atol=1e-10)
            t_np = time_fn(np_fn, [(z,) for z in vectors], repeats)
            t_nb = time_fn(nb_fn, [(z,) for z in vectors], repeats)
            rows.append((f"{name} n={n}", t_np, t_nb))
        dists = [numpy_backend.sparsemax(z) for z in vectors]
        b = max(1, n // 4)
        for p in dists[:5]:
            assert np.allclose(
                numpy_backend.top_b_renormalize(p, b),
                numba_backend.top_b_renormalize(p, b),
                atol=1e-12,
            )
        t_np = time_fn(numpy_backend.top_b_renormalize, [(p, b) for p in dists], repeats)
        t_nb = time_fn(numba_backend.top_b_renormalize, [(p, b) for p in dists], repeats)
        rows.append((f"top-b n={n}", t_np, t_nb))
    return rows


def bench_ista(repeats):
    rng = np.random.default_rng(1)
    rows = []
    for k, d, iters in ((16, 16, 50), (64, 32, 50)):
        x = np.ascontiguousarray(rng.normal(size=(d, k)))
        support = rng.random((k, k)) < 0.3
        np.fill_diagonal(support, False)
        penalty = rng.uniform(0.01, 0.2, size=(k, k))
        eta = 1.0 / (2.0 * np.linalg.norm(x @ x.T, 2) * 1.05)
        za, ha = numpy_backend.ista_solve(x, support, penalty, 1.0, eta, iters)
        zb, hb = numba_backend.ista_solve(x, support, penalty, 1.0, eta, iters)
        assert np.allclose(za, zb, atol=1e-9) and np.allclose(ha, hb, atol=1e-8)
        args = [(x, support, penalty, 1.0, eta, iters)]
        t_np = time_fn(lambda *a: numpy_backend.ista_solve(*a), args, repeats)
        t_nb = time_fn(lambda *a: numba_backend.ista_solve(*a), args, repeats)
        rows.append((f"ista K={k} d={d} L={iters}", t_np, t_nb))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rows = bench_vector_kernels(args.repeats) + bench_ista(args.repeats)
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name.ljust(width)}  {t_np * 1e3:8.2f}ms  {t_nb * 1e3:8.2f}ms  {t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
