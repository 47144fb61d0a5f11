"""Tests for the Jaccard and low-rank purification defenses."""

import numpy as np
import pytest

from graphnoise.graphs import Graph, edge_flip_count
from graphnoise.model import NoiseConfig, TrainConfig, train
from graphnoise.purify import jaccard_purify, svd_purify

from conftest import easy_sbm, random_graph


def edge_graph(features):
    n = len(features)
    adj = np.zeros((n, n))
    adj[0, 1] = adj[1, 0] = 1.0
    return Graph(adj, np.asarray(features, dtype=float))


class TestJaccard:
    def test_threshold_zero_is_identity(self, rs):
        g = random_graph(rs.child(0), 8)
        out = jaccard_purify(g, 0.0)
        assert np.array_equal(out.adjacency, g.adjacency)

    def test_identical_features_kept(self):
        g = edge_graph([[1.0, 2.0, 0.0], [1.0, 2.0, 0.0]])
        out = jaccard_purify(g, 1.0)
        assert out.adjacency[0, 1] == 1.0

    def test_hand_computed_similarity(self):
        # supports {1,2} and {2,3}: similarity 1/3
        g = edge_graph([[0.0, 1.0, 1.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
        kept = jaccard_purify(g, 1.0 / 3.0)
        assert kept.adjacency[0, 1] == 1.0  # similarity == threshold stays
        removed = jaccard_purify(g, 1.0 / 3.0 + 1e-9)
        assert removed.adjacency[0, 1] == 0.0

    def test_empty_supports_similarity_zero(self):
        g = edge_graph([[0.0, 0.0], [0.0, 0.0]])
        assert jaccard_purify(g, 0.0).adjacency[0, 1] == 1.0
        assert jaccard_purify(g, 0.1).adjacency[0, 1] == 0.0

    def test_never_adds_edges(self, rs):
        g = random_graph(rs.child(0), 10)
        out = jaccard_purify(g, 0.4)
        assert np.all(out.adjacency <= g.adjacency)

    def test_features_required(self):
        g = Graph(np.zeros((3, 3)))
        with pytest.raises(ValueError, match="features"):
            jaccard_purify(g, 0.5)


class TestSvdPurify:
    def test_full_rank_recovers_original(self, rs):
        g = random_graph(rs.child(0), 10)
        out = svd_purify(g, rank=10)
        assert np.array_equal(out.adjacency, g.adjacency)

    def test_full_rank_idempotent(self, rs):
        g = random_graph(rs.child(0), 8)
        once = svd_purify(g, rank=8)
        twice = svd_purify(once, rank=8)
        assert np.array_equal(once.adjacency, twice.adjacency)

    def test_rank_one_block_drops_noise_edge(self):
        # complete bipartite-ish block is rank-1 (outer product of its
        # indicator); a single extra edge is high-rank noise
        n = 8
        adj = np.zeros((n, n))
        for i in range(3):
            for j in range(3, 6):
                adj[i, j] = adj[j, i] = 1.0
        adj[6, 7] = adj[7, 6] = 1.0  # the noise edge
        g = Graph(adj)
        out = svd_purify(g, rank=1)
        assert out.adjacency[6, 7] == 0.0
        assert out.adjacency[0, 3] == 1.0

    def test_output_well_formed(self, rs):
        g = random_graph(rs.child(0), 9)
        out = svd_purify(g, rank=3, binarize_threshold=0.4)
        a = out.adjacency
        assert np.array_equal(a, a.T)
        assert np.all((a == 0.0) | (a == 1.0))
        assert np.all(np.diag(a) == 0.0)

    def test_rank_bounds(self, rs):
        g = random_graph(rs.child(0), 5)
        with pytest.raises(ValueError):
            svd_purify(g, rank=0)
        with pytest.raises(ValueError):
            svd_purify(g, rank=6)


def test_purify_then_noisy_training_pipeline():
    """Purification composes with noise-injected training end to end."""
    g = easy_sbm(seed=13, n=36)
    cleaned = jaccard_purify(g, 0.05)
    cleaned = svd_purify(cleaned, rank=6)
    params, history = train(cleaned, noise=NoiseConfig(beta=0.1),
                            tc=TrainConfig(epochs=10, seed=0))
    assert len(history) == 10
    assert params.W1.shape == (g.features.shape[1], 16)
    assert edge_flip_count(g, cleaned) >= 0
