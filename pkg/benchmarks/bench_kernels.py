"""Timing comparison of the compiled kernels against their numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--classes N] [--trials N] [--repeat N]

Run once normally and once with PLDA_LOCAL_NO_NUMBA=1 to see what the
environment flag costs; within one process the table below already times both
paths directly.
"""
import argparse
import time

import numpy as np

from plda_local import _kernels


def timeit(fn, repeat):
    fn()  # warm-up (JIT compilation for the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_estep(n_classes, q, repeat, rng):
    A = rng.normal(size=(n_classes, q))
    counts = rng.integers(1, 12, size=n_classes).astype(np.int64)
    M = rng.normal(size=(q, q))
    F = M @ M.T / q
    t_np = timeit(lambda: _kernels.estep_stats_np(A, counts, F), repeat)
    rows = [("estep_stats", "numpy", t_np, 1.0)]
    if _kernels.HAS_NUMBA:
        t_nb = timeit(lambda: _kernels.estep_stats(A, counts, F), repeat)
        rows.append(("estep_stats", "numba", t_nb, t_np / t_nb))
    return rows


def bench_score(n_trials, q, repeat, rng):
    n_models, n_tests, n_counts = 500, 2000, 4
    alpha = rng.normal(size=n_models)
    U = rng.normal(size=(n_models, q))
    cidx = rng.integers(0, n_counts, size=n_models).astype(np.int64)
    AT = rng.normal(size=(n_tests, q))
    beta = rng.normal(size=(n_counts, n_tests))
    pm = rng.integers(0, n_models, size=n_trials).astype(np.int64)
    pt = rng.integers(0, n_tests, size=n_trials).astype(np.int64)
    t_np = timeit(lambda: _kernels.score_trials_np(alpha, U, cidx, AT, beta,
                                                   pm, pt), repeat)
    rows = [("score_trials", "numpy", t_np, 1.0)]
    if _kernels.HAS_NUMBA:
        t_nb = timeit(lambda: _kernels.score_trials(alpha, U, cidx, AT, beta,
                                                    pm, pt), repeat)
        rows.append(("score_trials", "numba", t_nb, t_np / t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classes", type=int, default=50000)
    ap.add_argument("--trials", type=int, default=2_000_000)
    ap.add_argument("--q", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ns = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"numba available: {_kernels.HAS_NUMBA}")
    rows = bench_estep(ns.classes, ns.q, ns.repeat, rng)
    rows += bench_score(ns.trials, ns.q, ns.repeat, rng)
    print(f"{'kernel':<14}{'path':<8}{'best (ms)':>12}{'speedup':>10}")
    for kernel, path, t, speedup in rows:
        print(f"{kernel:<14}{path:<8}{t * 1e3:>12.2f}{speedup:>10.2f}")


if __name__ == "__main__":
    main()
