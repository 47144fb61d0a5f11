"""Dense float64 matrix substrate.

Fixed-order matmul, power-iteration spectral norm, truncated SVD by
deflation, Gaussian sampling, and a splittable counter-based random
source. Everything downstream (graphs, models, attacks, bounds,
certification) builds on these primitives.
"""

import numpy as np

from . import _kernels

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000

# Fixed entropy for the default power-iteration start vector. A seeded
# random start avoids pathological orthogonal starts while keeping every
# call a pure function of its inputs.
_POWER_SEED = 0x5EED


class RandomSource:
    """Seedable random stream with independent child streams.

    Wraps a counter-based Philox generator. ``child(stream_id)`` derives a
    stream that is statistically independent of its siblings regardless of
    how many draws each sibling has consumed, which is what makes
    concurrent trials reproducible.
    """

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in _spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id) -> "RandomSource":
        return RandomSource(self.seed, self.spawn_key + (int(stream_id),))

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def uniform(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, spawn_key={self.spawn_key})"


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-d float64 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed inner-loop accumulation order.

    Results are bit-reproducible: the k-accumulation order is pinned, so
    repeated calls (and the naive triple-loop definition) agree exactly.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions differ: {a.shape} x {b.shape}"
        )
    out = _kernels.matmul(np.ascontiguousarray(a), np.ascontiguousarray(b))
    if not np.all(np.isfinite(out)):
        raise ValueError("matmul: non-finite result (overflow?)")
    return out


def _power_start(n, rs):
    if rs is None:
        rs = RandomSource(_POWER_SEED)
    v = rs.normal(n)
    nv = np.linalg.norm(v)
    if nv == 0.0:  # pragma: no cover - probability zero
        v = np.ones(n)
        nv = np.sqrt(float(n))
    return v / nv


def spectral_norm_info(m, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rs=None):
    """Largest singular value by power iteration on ``m^T m``.

    Returns ``(estimate, converged)``. Convergence means two successive
    estimates differed by less than ``tol``; on non-convergence the best
    estimate is returned with the flag set False.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise ValueError("spectral_norm: empty matrix")
    if tol <= 0:
        raise ValueError("spectral_norm: tol must be positive")
    v = _power_start(m.shape[1], rs)
    last = np.inf
    for _ in range(max_iter):
        w = m @ v
        sigma = np.linalg.norm(w)
        if sigma == 0.0:
            return 0.0, True
        u = m.T @ w
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return float(sigma), True
        v = u / nu
        if abs(sigma - last) < tol:
            return float(sigma), True
        last = sigma
    return float(last), False


def spectral_norm(m, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rs=None) -> float:
    value, _ = spectral_norm_info(m, tol=tol, max_iter=max_iter, rs=rs)
    return value


def truncated_svd(m, k, tol=1e-12, max_iter=DEFAULT_MAX_ITER, rs=None):
    """Top-k singular triplets by power iteration with deflation.

    Returns ``(U, s, V)`` with ``U`` of shape n x k, ``s`` the singular
    values (non-increasing), and ``V`` of shape m x k, so that
    ``U @ diag(s) @ V.T`` is the rank-k approximation. ``k = 0`` yields
    empty factors.
    """
    m = as_matrix(m)
    n, p = m.shape
    if k > min(n, p):
        raise ValueError(f"truncated_svd: k={k} exceeds min(shape)={min(n, p)}")
    u_cols = np.zeros((n, k))
    s_vals = np.zeros(k)
    v_cols = np.zeros((p, k))
    if k == 0:
        return u_cols, s_vals, v_cols
    work = m.copy()
    if rs is None:
        rs = RandomSource(_POWER_SEED)
    for i in range(k):
        v = _power_start(p, rs.child(i))
        sigma = 0.0
        last = np.inf
        for _ in range(max_iter):
            w = work @ v
            sigma = np.linalg.norm(w)
            if sigma == 0.0:
                break
            u = work.T @ w
            nu = np.linalg.norm(u)
            if nu == 0.0:
                break
            v = u / nu
            if abs(sigma - last) < tol:
                break
            last = sigma
        if sigma == 0.0:
            break  # remaining components are exactly zero
        w = work @ v
        sigma = np.linalg.norm(w)
        u = w / sigma
        u_cols[:, i] = u
        s_vals[i] = sigma
        v_cols[:, i] = v
        work = work - sigma * np.outer(u, v)
    return u_cols, s_vals, v_cols


def gaussian_sample(rs: RandomSource, rows, cols, scale) -> np.ndarray:
    """Matrix of i.i.d. N(0, scale) entries; scale is the variance."""
    if scale < 0:
        raise ValueError(f"gaussian_sample: negative scale {scale}")
    if scale == 0:
        return np.zeros((rows, cols))
    return np.sqrt(scale) * rs.normal((rows, cols))
