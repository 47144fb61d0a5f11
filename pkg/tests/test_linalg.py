"""Tests for the dense matrix substrate."""

import numpy as np
import pytest

from graphnoise.linalg import (RandomSource, gaussian_sample, matmul,
                               spectral_norm, spectral_norm_info,
                               truncated_svd)


def naive_matmul(a, b):
    """Triple-loop reference with the defining accumulation order."""
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((3, 5))
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_example(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        assert np.array_equal(matmul(a, b), np.array([[2.0], [4.0]]))

    def test_matches_naive_triple_loop_exactly(self):
        rng = np.random.default_rng(42)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="inner dimensions"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_non_finite_rejected(self):
        bad = np.array([[np.nan, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            matmul(bad, np.eye(2))

    def test_associativity_property(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = rng.standard_normal((4, 5))
            b = rng.standard_normal((5, 3))
            c = rng.standard_normal((3, 6))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            denom = max(np.abs(left).max(), 1.0)
            assert np.abs(left - right).max() / denom < 1e-9

    def test_bit_reproducible(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((7, 7))
        b = rng.standard_normal((7, 7))
        assert np.array_equal(matmul(a, b), matmul(a, b))


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-10)

    def test_hand_case(self):
        # m^T m = [[25, 0], [0, 0]], top eigenvalue 25
        m = np.array([[3.0, 0.0], [4.0, 0.0]])
        assert spectral_norm(m) == pytest.approx(5.0, abs=1e-9)

    def test_matches_full_svd_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            m = rng.standard_normal((10, 10))
            oracle = np.linalg.svd(m, compute_uv=False)[0]
            assert spectral_norm(m) == pytest.approx(oracle, abs=1e-8)

    def test_zero_matrix(self):
        value, converged = spectral_norm_info(np.zeros((3, 3)))
        assert value == 0.0 and converged

    def test_non_convergence_flag(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((12, 12))
        value, converged = spectral_norm_info(m, tol=1e-16, max_iter=2)
        assert not converged
        assert np.isfinite(value)

    def test_lower_bound_witness_and_frobenius_cap(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            m = rng.standard_normal((6, 4))
            v = rng.standard_normal(4)
            sigma = spectral_norm(m)
            assert sigma + 1e-9 >= np.linalg.norm(m @ v) / np.linalg.norm(v)
            assert sigma <= np.linalg.norm(m, "fro") + 1e-9

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            spectral_norm(np.ones((2, 2)), tol=0.0)


class TestTruncatedSvd:
    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal(6)
        v = rng.standard_normal(4)
        m = np.outer(u, v)
        uu, s, vv = truncated_svd(m, 1)
        recon = (uu * s[None, :]) @ vv.T
        assert np.abs(recon - m).max() < 1e-10

    def test_diagonal_singular_values(self):
        m = np.diag([3.0, 2.0, 1.0])
        _, s, _ = truncated_svd(m, 2)
        assert s == pytest.approx([3.0, 2.0], abs=1e-9)

    def test_full_rank_recovery(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((8, 8))
        u, s, v = truncated_svd(m, 8)
        recon = (u * s[None, :]) @ v.T
        assert np.abs(recon - m).max() < 1e-8

    def test_k_zero_gives_empty_factors(self):
        u, s, v = truncated_svd(np.ones((3, 3)), 0)
        assert u.shape == (3, 0) and s.shape == (0,) and v.shape == (3, 0)

    def test_k_too_large_rejected(self):
        with pytest.raises(ValueError):
            truncated_svd(np.ones((3, 3)), 4)

    def test_singular_values_sorted_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            m = rng.standard_normal((7, 5))
            _, s, _ = truncated_svd(m, 5)
            assert np.all(s >= 0.0)
            assert np.all(s[:-1] >= s[1:] - 1e-9)


class TestGaussianSample:
    def test_zero_scale_is_zero_matrix(self):
        m = gaussian_sample(RandomSource(0), 4, 5, 0.0)
        assert np.array_equal(m, np.zeros((4, 5)))

    def test_moments(self):
        m = gaussian_sample(RandomSource(1), 100, 1000, 1.0)
        assert abs(m.mean()) < 0.02
        assert abs(m.var() - 1.0) < 0.05

    def test_scale_is_variance(self):
        m = gaussian_sample(RandomSource(2), 100, 1000, 0.25)
        assert abs(m.var() - 0.25) < 0.02

    def test_same_seed_same_matrix(self):
        a = gaussian_sample(RandomSource(3), 6, 6, 2.0)
        b = gaussian_sample(RandomSource(3), 6, 6, 2.0)
        assert np.array_equal(a, b)

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            gaussian_sample(RandomSource(0), 2, 2, -1.0)


class TestRandomSource:
    def test_identical_seed_identical_stream(self):
        a = RandomSource(99).normal(10)
        b = RandomSource(99).normal(10)
        assert np.array_equal(a, b)

    def test_children_independent_of_sibling_draws(self):
        parent = RandomSource(5)
        c1 = parent.child(0)
        c1.normal(100)  # consume draws in one sibling
        first = parent.child(1).normal(10)
        fresh = RandomSource(5).child(1).normal(10)
        assert np.array_equal(first, fresh)

    def test_distinct_children_differ(self):
        parent = RandomSource(5)
        assert not np.array_equal(parent.child(0).normal(10),
                                  parent.child(1).normal(10))
