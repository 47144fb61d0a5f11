"""Numerical hot kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. The active backend is chosen at import time: numba when it is
importable and the environment variable ``GRAPHNOISE_NUMBA`` is not set
to ``0``/``false``/``off``, the numpy fallback otherwise.

The matmul twins accumulate along the inner dimension in a fixed
increasing-k order, so both backends produce bit-identical products.
Kernels that go through libm (tanh) may differ between backends in the
last ulp; determinism is guaranteed per backend, not across backends.

``benchmarks/bench_backends.py`` times the two paths against each other.
"""

import os

import numpy as np

_FALSEY = {"0", "false", "off", "no"}


def _numba_requested() -> bool:
    return os.environ.get("GRAPHNOISE_NUMBA", "1").strip().lower() not in _FALSEY


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

NUMBA_ENABLED = HAS_NUMBA and _numba_requested()


# ---------------------------------------------------------------------------
# matmul: C[i, j] = sum_k A[i, k] * B[k, j], accumulated in increasing k.
# The numba version uses an i,k,j loop nest (B stays row-contiguous); the
# numpy version accumulates rank-1 updates over k. Both perform the exact
# same per-element operation sequence, so results match bit for bit.
# ---------------------------------------------------------------------------

def matmul_numpy(a, b):
    k = a.shape[1]
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for kk in range(k):
        out += a[:, kk : kk + 1] * b[kk : kk + 1, :]
    return out


def _matmul_loops(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for kk in range(k):
            aik = a[i, kk]
            for j in range(m):
                out[i, j] += aik * b[kk, j]
    return out


# ---------------------------------------------------------------------------
# Smoothing vote kernel: for a chunk of Monte Carlo samples, flip every
# upper-triangular adjacency bit independently (edges off w.p. p_minus,
# non-edges on w.p. p_plus), rebuild the message passing operator, run the
# 2-layer forward pass and tally argmax votes. Randomness comes in as
# precomputed arrays so the sample stream is owned by the caller's
# generator, not the kernel.
#
# op_kind: 0 = gcn-normalized, 1 = gin (adjacency + gin_diag * I)
# act_kind: 0 = tanh, 1 = relu
# noise_layer: 0 = no hidden noise, 1 or 2 = inject after that layer
# ---------------------------------------------------------------------------

def vote_chunk_numpy(adj, pair_i, pair_j, uniforms, p_plus, p_minus,
                     p1, w2, wr, br, op_kind, self_loops, gin_diag,
                     act_kind, noise_std, noise_layer, noise1, noise2,
                     votes):
    n = adj.shape[0]
    is_edge = adj[pair_i, pair_j] > 0.0
    on_prob = np.where(is_edge, 1.0 - p_minus, p_plus)
    for s in range(uniforms.shape[0]):
        m = adj.copy()
        bits = (uniforms[s] < on_prob).astype(np.float64)
        m[pair_i, pair_j] = bits
        m[pair_j, pair_i] = bits
        if op_kind == 0:
            if self_loops:
                m[np.arange(n), np.arange(n)] += 1.0
            d = m.sum(axis=1)
            r = np.where(d > 0.0, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 0.0)
            m *= r[:, None]
            m *= r[None, :]
        else:
            m[np.arange(n), np.arange(n)] += gin_diag
        h1 = matmul_numpy(m, p1)
        h1 = np.tanh(h1) if act_kind == 0 else np.maximum(h1, 0.0)
        if noise_layer == 1 and noise_std > 0.0:
            h1 = h1 + noise_std * noise1[s]
        h2 = matmul_numpy(m, matmul_numpy(h1, w2))
        h2 = np.tanh(h2) if act_kind == 0 else np.maximum(h2, 0.0)
        if noise_layer == 2 and noise_std > 0.0:
            h2 = h2 + noise_std * noise2[s]
        logits = matmul_numpy(h2, wr) + br[None, :]
        pred = np.argmax(logits, axis=1)
        for v in range(n):
            votes[v, pred[v]] += 1
    return votes


if HAS_NUMBA:
    matmul_numba = numba.njit(cache=True, nogil=True)(_matmul_loops)

    @numba.njit(cache=True, nogil=True)
    def vote_chunk_numba(adj, pair_i, pair_j, uniforms, p_plus, p_minus,
                         p1, w2, wr, br, op_kind, self_loops, gin_diag,
                         act_kind, noise_std, noise_layer, noise1, noise2,
                         votes):
        n = adj.shape[0]
        n_pairs = pair_i.shape[0]
        c = br.shape[0]
        for s in range(uniforms.shape[0]):
            m = adj.copy()
            for p in range(n_pairs):
                i = pair_i[p]
                j = pair_j[p]
                if adj[i, j] > 0.0:
                    on = uniforms[s, p] < (1.0 - p_minus)
                else:
                    on = uniforms[s, p] < p_plus
                val = 1.0 if on else 0.0
                m[i, j] = val
                m[j, i] = val
            if op_kind == 0:
                if self_loops:
                    for i in range(n):
                        m[i, i] += 1.0
                r = np.empty(n, dtype=np.float64)
                for i in range(n):
                    d = 0.0
                    for j in range(n):
                        d += m[i, j]
                    r[i] = 1.0 / np.sqrt(d) if d > 0.0 else 0.0
                for i in range(n):
                    for j in range(n):
                        m[i, j] *= r[i] * r[j]
            else:
                for i in range(n):
                    m[i, i] += gin_diag
            h1 = matmul_numba(m, p1)
            if act_kind == 0:
                h1 = np.tanh(h1)
            else:
                h1 = np.maximum(h1, 0.0)
            if noise_layer == 1 and noise_std > 0.0:
                h1 = h1 + noise_std * noise1[s]
            h2 = matmul_numba(m, matmul_numba(h1, w2))
            if act_kind == 0:
                h2 = np.tanh(h2)
            else:
                h2 = np.maximum(h2, 0.0)
            if noise_layer == 2 and noise_std > 0.0:
                h2 = h2 + noise_std * noise2[s]
            logits = matmul_numba(h2, wr)
            for v in range(n):
                best = 0
                bestval = logits[v, 0] + br[0]
                for cc in range(1, c):
                    val = logits[v, cc] + br[cc]
                    if val > bestval:
                        bestval = val
                        best = cc
                votes[v, best] += 1
        return votes
else:  # pragma: no cover
    matmul_numba = None
    vote_chunk_numba = None


if NUMBA_ENABLED:
    matmul = matmul_numba
    vote_chunk = vote_chunk_numba
    BACKEND = "numba"
else:
    matmul = matmul_numpy
    vote_chunk = vote_chunk_numpy
    BACKEND = "numpy"
