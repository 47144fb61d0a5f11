#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the fixed-order matmul at a few shapes and the smoothing vote
kernel at two graph sizes, printing a speedup table. Run from the repo
root:

    python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from graphnoise import _kernels as K


def time_fn(fn, *args, repeat=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_matmul():
    rng = np.random.default_rng(0)
    print(f"{'matmul shape':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for n, k, m in [(64, 64, 64), (300, 300, 16), (300, 300, 300),
                    (1000, 1000, 16)]:
        a = rng.standard_normal((n, k))
        b = rng.standard_normal((k, m))
        t_np = time_fn(K.matmul_numpy, a, b)
        row = f"{f'{n}x{k} @ {k}x{m}':<22}{1e3 * t_np:>12.2f}"
        if K.HAS_NUMBA:
            t_nb = time_fn(K.matmul_numba, a, b)
            row += f"{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x"
        print(row)


def vote_inputs(n, samples, rng):
    adj = np.triu((rng.random((n, n)) < 0.05).astype(float), 1)
    adj = adj + adj.T
    iu, ju = np.triu_indices(n, k=1)
    k, e, c = 16, 16, 3
    x = rng.standard_normal((n, k))
    args = (
        adj, iu.astype(np.int64), ju.astype(np.int64),
        rng.random((samples, len(iu))), 0.001, 0.4,
        x @ rng.standard_normal((k, e)),
        0.3 * rng.standard_normal((e, e)),
        0.3 * rng.standard_normal((e, c)),
        np.zeros(c), 0, False, 0.0, 0, 0.0, 0,
        np.zeros((0, n, e)), np.zeros((0, n, e)),
    )
    return args


def bench_votes():
    rng = np.random.default_rng(1)
    print(f"\n{'vote kernel':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for n, samples in [(100, 64), (300, 64)]:
        args = vote_inputs(n, samples, rng)

        def run_numpy():
            votes = np.zeros((n, 3), dtype=np.int64)
            K.vote_chunk_numpy(*args, votes)

        t_np = time_fn(run_numpy, repeat=3)
        row = f"{f'n={n}, {samples} samples':<22}{1e3 * t_np:>12.1f}"
        if K.HAS_NUMBA:

            def run_numba():
                votes = np.zeros((n, 3), dtype=np.int64)
                K.vote_chunk_numba(*args, votes)

            t_nb = time_fn(run_numba, repeat=3)
            row += f"{1e3 * t_nb:>12.1f}{t_np / t_nb:>9.1f}x"
        print(row)


if __name__ == "__main__":
    print(f"active backend: {K.BACKEND} (numba available: {K.HAS_NUMBA})\n")
    bench_matmul()
    bench_votes()
