"""Two-layer graph convolution node classifier with an MLP readout.

Forward pass, reverse-mode gradients, Adam training with
checkpoint-on-best-validation, Monte Carlo prediction under hidden-state
Gaussian noise, and checkpoint serialization. The hidden noise is the
defense mechanism: a centered Gaussian with per-coordinate variance
``beta`` added after a chosen layer during training and/or inference.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from ._kernels import matmul
from .graphs import GCN_NORMALIZED, GIN_AUGMENTED, Graph, build_operator
from .linalg import RandomSource, gaussian_sample


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelParams:
    arch: str                 # "gcn" | "gin"
    W1: np.ndarray            # in_dim x hidden
    W2: np.ndarray            # hidden x hidden
    readout_W: np.ndarray     # hidden x classes
    readout_b: np.ndarray     # classes
    activation: str = "tanh"  # "tanh" | "relu", both 1-Lipschitz
    lam: float = 0.0          # gin operator offset

    def __post_init__(self):
        if self.arch not in ("gcn", "gin"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        e = self.W1.shape[1]
        if self.W2.shape != (e, e):
            raise ValueError(f"W2 must be {e}x{e}, got {self.W2.shape}")
        if self.readout_W.shape[0] != e:
            raise ValueError("readout_W rows must match hidden width")
        if self.readout_b.shape != (self.readout_W.shape[1],):
            raise ValueError("readout_b length must match class count")
        for w in (self.W1, self.W2, self.readout_W, self.readout_b):
            if not np.all(np.isfinite(w)):
                raise ValueError("parameters contain non-finite entries")

    @property
    def in_dim(self):
        return self.W1.shape[0]

    @property
    def hidden_dim(self):
        return self.W1.shape[1]

    @property
    def n_classes(self):
        return self.readout_W.shape[1]

    def copy(self) -> "ModelParams":
        return replace(self, W1=self.W1.copy(), W2=self.W2.copy(),
                       readout_W=self.readout_W.copy(),
                       readout_b=self.readout_b.copy())

    def operator_variant(self):
        return GCN_NORMALIZED if self.arch == "gcn" else GIN_AUGMENTED


@dataclass
class NoiseConfig:
    """Hidden-state Gaussian noise: variance ``beta``, injected after
    layer 1 or 2, switchable per phase."""

    beta: float = 0.0
    inject_after_layer: int = 1
    active_at_train: bool = True
    active_at_inference: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.inject_after_layer not in (1, 2):
            raise ValueError("inject_after_layer must be 1 or 2")

    def active(self, training: bool) -> bool:
        if self.beta == 0.0:
            return False
        return self.active_at_train if training else self.active_at_inference


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 300
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def _glorot(rs, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return limit * (2.0 * rs.uniform((fan_in, fan_out)) - 1.0)


def init_params(rs: RandomSource, in_dim, hidden_dim, n_classes,
                arch="gcn", activation="tanh", lam=0.0) -> ModelParams:
    """Glorot-uniform initialization of all weight matrices."""
    return ModelParams(
        arch=arch,
        W1=_glorot(rs, in_dim, hidden_dim),
        W2=_glorot(rs, hidden_dim, hidden_dim),
        readout_W=_glorot(rs, hidden_dim, n_classes),
        readout_b=np.zeros(n_classes),
        activation=activation,
        lam=lam,
    )


def _act(x, kind):
    return np.tanh(x) if kind == "tanh" else np.maximum(x, 0.0)


def _act_grad(pre, kind):
    if kind == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    return (pre > 0.0).astype(np.float64)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _op_matrix(op):
    return op.matrix if hasattr(op, "matrix") else np.asarray(op, dtype=np.float64)


def forward(params: ModelParams, op, X, noise: NoiseConfig = None,
            rs: RandomSource = None, training=False):
    """Run the two conv layers plus readout.

    Returns ``(logits, conv_out)`` where ``conv_out`` is the hidden state
    after the second conv layer (including injected noise when active) —
    the quantity the robustness bounds are stated on.
    """
    opm = np.ascontiguousarray(_op_matrix(op))
    X = np.ascontiguousarray(X, dtype=np.float64)
    inject = noise is not None and noise.active(training)
    if inject and rs is None:
        raise ValueError("noise is active but no random source was supplied")
    h1 = _act(matmul(opm, matmul(X, params.W1)), params.activation)
    if inject and noise.inject_after_layer == 1:
        h1 = h1 + gaussian_sample(rs, h1.shape[0], h1.shape[1], noise.beta)
    h2 = _act(matmul(opm, matmul(h1, params.W2)), params.activation)
    if inject and noise.inject_after_layer == 2:
        h2 = h2 + gaussian_sample(rs, h2.shape[0], h2.shape[1], noise.beta)
    logits = matmul(h2, params.readout_W) + params.readout_b[None, :]
    return logits, h2


def _masked_ce_and_dlogits(logits, labels, mask):
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("mask selects no nodes")
    probs = softmax(logits)
    idx = np.nonzero(mask)[0]
    picked = probs[idx, labels[idx]]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    dlogits = np.zeros_like(logits)
    dlogits[idx] = probs[idx]
    dlogits[idx, labels[idx]] -= 1.0
    dlogits /= count
    return loss, dlogits


def loss_and_grads(params: ModelParams, op, X, labels, mask,
                   noise: NoiseConfig = None, rs: RandomSource = None,
                   training=True):
    """Masked mean cross-entropy and reverse-mode parameter gradients.

    Injected noise is sampled once and treated as a constant in the
    backward pass (reparameterization).
    """
    opm = np.ascontiguousarray(_op_matrix(op))
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    inject = noise is not None and noise.active(training)
    if inject and rs is None:
        raise ValueError("noise is active but no random source was supplied")
    act = params.activation

    p1 = matmul(X, params.W1)
    s1 = matmul(opm, p1)
    h1 = _act(s1, act)
    if inject and noise.inject_after_layer == 1:
        h1 = h1 + gaussian_sample(rs, h1.shape[0], h1.shape[1], noise.beta)
    p2 = matmul(h1, params.W2)
    s2 = matmul(opm, p2)
    h2 = _act(s2, act)
    if inject and noise.inject_after_layer == 2:
        h2 = h2 + gaussian_sample(rs, h2.shape[0], h2.shape[1], noise.beta)
    logits = matmul(h2, params.readout_W) + params.readout_b[None, :]

    loss, dlogits = _masked_ce_and_dlogits(logits, labels, mask)

    d_readout_w = matmul(h2.T, dlogits)
    d_readout_b = dlogits.sum(axis=0)
    dh2 = matmul(dlogits, params.readout_W.T)
    ds2 = dh2 * _act_grad(s2, act)
    dp2 = matmul(opm.T, ds2)
    d_w2 = matmul(h1.T, dp2)
    dh1 = matmul(dp2, params.W2.T)
    ds1 = dh1 * _act_grad(s1, act)
    dp1 = matmul(opm.T, ds1)
    d_w1 = matmul(X.T, dp1)

    grads = {"W1": d_w1, "W2": d_w2, "readout_W": d_readout_w,
             "readout_b": d_readout_b}
    return loss, grads


def loss_input_grads(params: ModelParams, op, X, labels, mask):
    """Noiseless loss plus gradients w.r.t. the operator matrix and the
    features — the pieces the white-box attacks need."""
    opm = np.ascontiguousarray(_op_matrix(op))
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    act = params.activation

    p1 = matmul(X, params.W1)
    s1 = matmul(opm, p1)
    h1 = _act(s1, act)
    p2 = matmul(h1, params.W2)
    s2 = matmul(opm, p2)
    h2 = _act(s2, act)
    logits = matmul(h2, params.readout_W) + params.readout_b[None, :]

    loss, dlogits = _masked_ce_and_dlogits(logits, labels, mask)

    dh2 = matmul(dlogits, params.readout_W.T)
    ds2 = dh2 * _act_grad(s2, act)
    d_op = matmul(ds2, p2.T)
    dp2 = matmul(opm.T, ds2)
    dh1 = matmul(dp2, params.W2.T)
    ds1 = dh1 * _act_grad(s1, act)
    d_op += matmul(ds1, p1.T)
    dp1 = matmul(opm.T, ds1)
    d_x = matmul(dp1, params.W1.T)
    return loss, d_op, d_x


def predict_distribution(params: ModelParams, op, X,
                         noise: NoiseConfig = None, rs: RandomSource = None,
                         samples=1):
    """Monte Carlo average of softmax(logits) over noise draws.

    With inactive noise this collapses to a single deterministic softmax.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if noise is None or not noise.active(training=False):
        logits, _ = forward(params, op, X)
        return softmax(logits)
    acc = None
    for s in range(samples):
        logits, _ = forward(params, op, X, noise, rs.child(s), training=False)
        p = softmax(logits)
        acc = p if acc is None else acc + p
    return acc / samples


def masked_accuracy(probs, labels, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() == 0:
        raise ValueError("mask selects no nodes")
    pred = np.argmax(probs, axis=1)
    return float(np.mean(pred[mask] == np.asarray(labels)[mask]))


def train(g: Graph, arch="gcn", noise: NoiseConfig = None,
          tc: TrainConfig = None, hidden_dim=16, activation="tanh",
          self_loops=False, lam=0.0, rs: RandomSource = None):
    """Full-graph Adam training with checkpoint on best validation accuracy.

    Deterministic given the seed: initialization and noise come from
    derived child streams. Returns ``(params, history)`` where history
    rows are ``(epoch, train_loss, val_accuracy)``; the loss is measured
    before the epoch's update, the accuracy after it (noiseless forward).
    """
    if g.features is None or g.labels is None:
        raise ValueError("training needs features and labels")
    if g.train_mask is None or g.val_mask is None:
        raise ValueError("training needs train and val masks")
    tc = tc or TrainConfig()
    if rs is None:
        rs = RandomSource(tc.seed)
    rs_init, rs_noise = rs.child(0), rs.child(1)
    op = build_operator(g, GCN_NORMALIZED if arch == "gcn" else GIN_AUGMENTED,
                        self_loops=self_loops, lam=lam)
    params = init_params(rs_init, g.features.shape[1], hidden_dim,
                         g.num_classes, arch=arch, activation=activation,
                         lam=lam)
    names = ("W1", "W2", "readout_W", "readout_b")
    m = {k: np.zeros_like(getattr(params, k)) for k in names}
    v = {k: np.zeros_like(getattr(params, k)) for k in names}
    best_params = params.copy()
    best_val = -np.inf
    history = []
    for epoch in range(tc.epochs):
        try:
            loss, grads = loss_and_grads(params, op, g.features, g.labels,
                                         g.train_mask, noise,
                                         rs_noise.child(epoch), training=True)
        except ValueError as exc:
            if "non-finite" not in str(exc):
                raise
            raise TrainingDiverged(
                f"numerical blow-up at epoch {epoch}: {exc}"
            ) from exc
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")
        t = epoch + 1
        for k in names:
            gk = grads[k]
            m[k] = tc.adam_beta1 * m[k] + (1 - tc.adam_beta1) * gk
            v[k] = tc.adam_beta2 * v[k] + (1 - tc.adam_beta2) * gk * gk
            mhat = m[k] / (1 - tc.adam_beta1 ** t)
            vhat = v[k] / (1 - tc.adam_beta2 ** t)
            getattr(params, k)[...] -= (
                tc.learning_rate * mhat / (np.sqrt(vhat) + tc.adam_eps)
            )
        logits, _ = forward(params, op, g.features)
        val_acc = masked_accuracy(softmax(logits), g.labels, g.val_mask)
        history.append((epoch, loss, val_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_params = params.copy()
    return best_params, history


# ---------------------------------------------------------------------------
# Checkpoint serialization: JSON with shortest round-trip float literals,
# so weights survive a save/load cycle bit for bit.
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, noise: NoiseConfig, path):
    doc = {
        "arch": params.arch,
        "dims": {
            "in": params.in_dim,
            "hidden": params.hidden_dim,
            "classes": params.n_classes,
        },
        "activation": params.activation,
        "W1": params.W1.tolist(),
        "W2": params.W2.tolist(),
        "readout_W": params.readout_W.tolist(),
        "readout_b": params.readout_b.tolist(),
        "noise": {
            "beta": noise.beta,
            "layer": noise.inject_after_layer,
            "train": noise.active_at_train,
            "inference": noise.active_at_inference,
        },
    }
    if params.arch == "gin":
        doc["lambda"] = params.lam
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    params = ModelParams(
        arch=doc["arch"],
        W1=np.array(doc["W1"], dtype=np.float64),
        W2=np.array(doc["W2"], dtype=np.float64),
        readout_W=np.array(doc["readout_W"], dtype=np.float64),
        readout_b=np.array(doc["readout_b"], dtype=np.float64),
        activation=doc["activation"],
        lam=float(doc.get("lambda", 0.0)),
    )
    nz = doc["noise"]
    noise = NoiseConfig(beta=float(nz["beta"]),
                        inject_after_layer=int(nz["layer"]),
                        active_at_train=bool(nz["train"]),
                        active_at_inference=bool(nz["inference"]))
    return params, noise
