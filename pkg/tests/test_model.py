"""Tests for the 2-layer classifier: forward, gradients, training,
prediction, and checkpointing."""

import math

import numpy as np
import pytest

from graphnoise.graphs import GCN_NORMALIZED, build_operator
from graphnoise.linalg import RandomSource
from graphnoise.model import (ModelParams, NoiseConfig, TrainConfig, forward,
                              init_params, load_checkpoint, loss_and_grads,
                              loss_input_grads, masked_accuracy,
                              predict_distribution, save_checkpoint, softmax,
                              train)

from conftest import easy_sbm, path_graph, random_graph, random_params


def scalar_params(w1, w2, wr, br, arch="gcn", activation="tanh"):
    return ModelParams(arch=arch,
                       W1=np.array([[w1]]), W2=np.array([[w2]]),
                       readout_W=np.array([[wr]]),
                       readout_b=np.array([br]),
                       activation=activation)


def max_grad_error(rs, arch, activation, h=1e-6):
    """Worst central-difference discrepancy over every parameter entry.

    The denominator floor absorbs finite-difference roundoff
    (~eps * loss / h, i.e. 1e-10 absolute): entries below the floor are
    checked absolutely at that scale, larger ones relatively.
    """
    g = random_graph(rs.child(0), 5)
    params = random_params(rs.child(1), 6, arch=arch, activation=activation,
                           lam=0.3 if arch == "gin" else 0.0)
    op = build_operator(g, params.operator_variant(), lam=params.lam)
    _, grads = loss_and_grads(params, op, g.features, g.labels, g.train_mask)
    worst = 0.0
    for name in ("W1", "W2", "readout_W", "readout_b"):
        w = getattr(params, name)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + h
            lp, _ = loss_and_grads(params, op, g.features, g.labels,
                                   g.train_mask)
            w[idx] = orig - h
            lm, _ = loss_and_grads(params, op, g.features, g.labels,
                                   g.train_mask)
            w[idx] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(grads[name][idx]), 1e-4)
            worst = max(worst, abs(fd - grads[name][idx]) / denom)
    return worst


class TestForward:
    def test_beta_zero_matches_noiseless(self, rs):
        g = random_graph(rs.child(0), 6)
        params = random_params(rs.child(1), 6)
        op = build_operator(g, GCN_NORMALIZED)
        base, _ = forward(params, op, g.features)
        noisy, _ = forward(params, op, g.features,
                           NoiseConfig(beta=0.0), rs.child(2), training=True)
        assert np.array_equal(base, noisy)

    def test_zero_weights_broadcast_bias(self, rs):
        g = random_graph(rs.child(0), 5)
        params = random_params(rs.child(1), 6)
        params.W1[...] = 0.0
        params.readout_W[...] = 0.0
        params.readout_b[...] = [1.0, -2.0, 0.5]
        logits, _ = forward(params, build_operator(g), g.features)
        assert np.allclose(logits, np.tile([1.0, -2.0, 0.5], (5, 1)))

    def test_hand_unrolled_path_graph(self):
        # 3-node path, scalar weights, tanh; degrees (1, 2, 1)
        x = np.array([[1.0], [2.0], [-1.0]])
        g = path_graph(3, features=x)
        w1, w2, wr, br = 0.7, -0.4, 1.3, 0.2
        params = scalar_params(w1, w2, wr, br)
        op = build_operator(g, GCN_NORMALIZED)
        logits, conv = forward(params, op, g.features)

        r2 = 1.0 / math.sqrt(2.0)
        a = [[0.0, r2, 0.0], [r2, 0.0, r2], [0.0, r2, 0.0]]
        h1 = [math.tanh((a[i][0] * 1.0 + a[i][1] * 2.0 + a[i][2] * -1.0) * w1)
              for i in range(3)]
        h2 = [math.tanh((a[i][0] * h1[0] + a[i][1] * h1[1] + a[i][2] * h1[2])
                        * w2) for i in range(3)]
        expect = [h * wr + br for h in h2]
        assert np.allclose(conv[:, 0], h2, atol=1e-12)
        assert np.allclose(logits[:, 0], expect, atol=1e-12)

    def test_noise_requires_random_source(self, rs):
        g = random_graph(rs.child(0), 4)
        params = random_params(rs.child(1), 6)
        with pytest.raises(ValueError, match="random source"):
            forward(params, build_operator(g), g.features,
                    NoiseConfig(beta=0.5), rs=None, training=True)

    def test_pure_function_without_noise(self, rs):
        g = random_graph(rs.child(0), 6)
        params = random_params(rs.child(1), 6)
        op = build_operator(g)
        a, _ = forward(params, op, g.features)
        b, _ = forward(params, op, g.features)
        assert np.array_equal(a, b)

    def test_noise_variance_matches_beta(self):
        # zero weights + injection after layer 2: conv_out is pure noise
        g = path_graph(4, features=np.ones((4, 1)))
        params = ModelParams(arch="gcn", W1=np.zeros((1, 8)),
                             W2=np.zeros((8, 8)),
                             readout_W=np.zeros((8, 2)),
                             readout_b=np.zeros(2))
        op = build_operator(g)
        noise = NoiseConfig(beta=0.3, inject_after_layer=2)
        rs = RandomSource(8)
        draws = [forward(params, op, g.features, noise, rs.child(i),
                         training=True)[1] for i in range(10000 // 32)]
        var = np.var(np.stack(draws))
        assert abs(var - 0.3) / 0.3 < 0.1


class TestLipschitz:
    @pytest.mark.parametrize("kind", ["tanh", "relu"])
    def test_activations_are_1_lipschitz(self, kind, rs):
        from graphnoise.model import _act

        a = rs.normal(1000) * 3
        b = rs.normal(1000) * 3
        fa = _act(a, kind)
        fb = _act(b, kind)
        assert np.all(np.abs(fa - fb) <= np.abs(a - b) + 1e-15)


class TestLossAndGrads:
    def test_uniform_logits_loss_is_log_c(self, rs):
        g = random_graph(rs.child(0), 6, classes=4)
        params = random_params(rs.child(1), 6, classes=4)
        params.W1[...] = 0.0
        params.readout_W[...] = 0.0
        params.readout_b[...] = 0.0
        loss, _ = loss_and_grads(params, build_operator(g), g.features,
                                 g.labels, g.train_mask)
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_empty_mask_rejected(self, rs):
        g = random_graph(rs.child(0), 6)
        params = random_params(rs.child(1), 6)
        with pytest.raises(ValueError, match="no nodes"):
            loss_and_grads(params, build_operator(g), g.features, g.labels,
                           np.zeros(6, dtype=bool))

    def test_beta_zero_equals_disabled_noise(self, rs):
        g = random_graph(rs.child(0), 6)
        params = random_params(rs.child(1), 6)
        op = build_operator(g)
        _, g0 = loss_and_grads(params, op, g.features, g.labels,
                               g.train_mask)
        _, g1 = loss_and_grads(params, op, g.features, g.labels,
                               g.train_mask, NoiseConfig(beta=0.0),
                               rs.child(2))
        for k in g0:
            assert np.array_equal(g0[k], g1[k])

    @pytest.mark.parametrize("arch,activation",
                             [("gcn", "tanh"), ("gin", "tanh"),
                              ("gcn", "relu")])
    def test_gradients_match_finite_differences(self, arch, activation):
        seeds = {("gcn", "tanh"): 101, ("gin", "tanh"): 202,
                 ("gcn", "relu"): 303}
        worst = max_grad_error(RandomSource(seeds[(arch, activation)]),
                               arch, activation)
        assert worst < 1e-5

    def test_input_grads_match_finite_differences(self, rs):
        g = random_graph(rs.child(0), 5)
        params = random_params(rs.child(1), 6)
        op = build_operator(g).matrix.copy()
        _, d_op, d_x = loss_input_grads(params, op, g.features, g.labels,
                                        g.test_mask)
        h = 1e-6

        def loss_at(opm, x):
            loss, _, _ = loss_input_grads(params, opm, x, g.labels,
                                          g.test_mask)
            return loss

        rng = np.random.default_rng(0)
        for _ in range(20):
            i, j = rng.integers(0, 5, size=2)
            bump = np.zeros_like(op)
            bump[i, j] = h
            fd = (loss_at(op + bump, g.features)
                  - loss_at(op - bump, g.features)) / (2 * h)
            assert fd == pytest.approx(d_op[i, j], rel=1e-4, abs=1e-8)
        x = np.array(g.features)
        for _ in range(10):
            i, j = rng.integers(0, 5, size=1)[0], rng.integers(0, 6)
            bump = np.zeros_like(x)
            bump[i, j] = h
            fd = (loss_at(op, x + bump) - loss_at(op, x - bump)) / (2 * h)
            assert fd == pytest.approx(d_x[i, j], rel=1e-4, abs=1e-8)


class TestTrain:
    def test_easy_sbm_reaches_high_accuracy(self):
        g = easy_sbm(seed=6)
        params, _ = train(g, tc=TrainConfig(epochs=150, seed=1))
        op = build_operator(g)
        logits, _ = forward(params, op, g.features)
        acc = masked_accuracy(softmax(logits), g.labels, g.test_mask)
        assert acc > 0.9

        # independent oracle: plain logistic regression on the features
        # alone should already do well on this planted partition
        from sklearn.linear_model import LogisticRegression

        clf = LogisticRegression(max_iter=1000)
        clf.fit(g.features[g.train_mask], g.labels[g.train_mask])
        oracle = clf.score(g.features[g.test_mask], g.labels[g.test_mask])
        assert oracle > 0.8

    def test_zero_epochs_returns_initial_params(self):
        g = easy_sbm(seed=2, n=30)
        rs = RandomSource(9)
        params, history = train(g, tc=TrainConfig(epochs=0), rs=rs)
        expect = init_params(RandomSource(9).child(0), g.features.shape[1],
                             16, g.num_classes)
        assert history == []
        assert np.array_equal(params.W1, expect.W1)

    def test_identical_seeds_identical_history(self):
        g = easy_sbm(seed=3, n=36)
        noise = NoiseConfig(beta=0.1)
        _, h1 = train(g, noise=noise, tc=TrainConfig(epochs=20, seed=4))
        _, h2 = train(g, noise=noise, tc=TrainConfig(epochs=20, seed=4))
        assert h1 == h2

    def test_divergence_aborts(self):
        from graphnoise.graphs import Graph
        from graphnoise.model import TrainingDiverged

        # features extreme enough that the unnormalized gin propagation
        # overflows and the loss goes NaN
        base = easy_sbm(seed=5, n=30)
        g = Graph(base.adjacency, base.features * 4e306, base.labels,
                  base.train_mask, base.val_mask, base.test_mask)
        with pytest.raises(TrainingDiverged, match="epoch"):
            train(g, arch="gin", activation="relu",
                  tc=TrainConfig(epochs=20))


class TestPredictDistribution:
    def test_beta_zero_equals_deterministic_softmax(self, rs):
        g = random_graph(rs.child(0), 6)
        params = random_params(rs.child(1), 6)
        op = build_operator(g)
        probs = predict_distribution(params, op, g.features,
                                     NoiseConfig(beta=0.0), rs.child(2),
                                     samples=7)
        logits, _ = forward(params, op, g.features)
        assert np.array_equal(probs, softmax(logits))

    def test_rows_sum_to_one(self, rs):
        g = random_graph(rs.child(0), 6)
        params = random_params(rs.child(1), 6)
        probs = predict_distribution(params, build_operator(g), g.features,
                                     NoiseConfig(beta=0.4), rs.child(2),
                                     samples=25)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_monte_carlo_consistency(self, rs):
        g = random_graph(rs.child(0), 8)
        params = random_params(rs.child(1), 6)
        op = build_operator(g)
        noise = NoiseConfig(beta=0.5)
        a = predict_distribution(params, op, g.features, noise, rs.child(2),
                                 samples=10000)
        b = predict_distribution(params, op, g.features, noise, rs.child(3),
                                 samples=20000)
        assert np.abs(a - b).max() < 0.02


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path, rs):
        params = random_params(rs.child(0), 5, arch="gin", lam=0.25)
        noise = NoiseConfig(beta=0.05, inject_after_layer=2,
                            active_at_inference=False)
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, noise, path)
        loaded, lnoise = load_checkpoint(path)
        assert np.array_equal(loaded.W1, params.W1)
        assert np.array_equal(loaded.W2, params.W2)
        assert np.array_equal(loaded.readout_W, params.readout_W)
        assert np.array_equal(loaded.readout_b, params.readout_b)
        assert loaded.arch == "gin" and loaded.lam == 0.25
        assert lnoise == noise
