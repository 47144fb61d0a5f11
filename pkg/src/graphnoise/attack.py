"""Structural and feature-space adversarial attacks.

Structural budgets count edge flips: ``b = floor(eps * m)`` with ``m``
the clean graph's undirected edge count. The white-box attacks ascend
the victim's masked cross-entropy on the test nodes (evasion setting,
no retraining loop). All attacks return fresh graphs; inputs are never
modified.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .graphs import (Graph, build_operator, edge_flip_count,
                     operator_distance)
from .linalg import RandomSource, spectral_norm


@dataclass
class AttackResult:
    graph: Graph
    flips_used: int = 0
    spectral_distance: float = 0.0  # operator space for structural attacks,
                                    # feature space for feature attacks
    loss_trajectory: list = field(default_factory=list)


def structural_budget(g: Graph, flip_fraction: float) -> int:
    if not (0.0 <= flip_fraction <= 1.0):
        raise ValueError(f"flip fraction must be in [0,1], got {flip_fraction}")
    return int(np.floor(flip_fraction * g.num_edges))


def _structural_result(g: Graph, new_adj, params=None, self_loops=False,
                       trajectory=None, final_loss=None):
    attacked = g.with_adjacency(new_adj)
    flips = edge_flip_count(g, attacked)
    if flips == 0:
        dist = 0.0
    elif params is None:
        dist = operator_distance(g, attacked)  # gcn-normalized by default
    else:
        variant = params.operator_variant()
        dist = operator_distance(g, attacked, variant,
                                 self_loops=self_loops, lam=params.lam)
    traj = list(trajectory or [])
    if final_loss is not None:
        traj.append(final_loss)
    return AttackResult(attacked, flips, dist, traj)


def dice(g: Graph, flip_fraction: float, rs: RandomSource) -> AttackResult:
    """Delete internally, connect externally.

    Each of the ``b`` steps flips one pair: with probability 1/2 it
    deletes a random existing same-label edge, otherwise inserts a random
    absent different-label edge; an exhausted branch falls back to the
    other one. Deletions and insertions target disjoint pair pools, so
    every step is a distinct flip.
    """
    if g.labels is None:
        raise ValueError("dice needs node labels")
    b = structural_budget(g, flip_fraction)
    adj = np.array(g.adjacency)
    if b == 0:
        return _structural_result(g, adj)
    iu, ju = np.triu_indices(g.n, k=1)
    same = g.labels[iu] == g.labels[ju]
    edge = adj[iu, ju] > 0
    del_pool = np.nonzero(edge & same)[0]
    ins_pool = np.nonzero(~edge & ~same)[0]
    del_pool = del_pool[rs.permutation(len(del_pool))]
    ins_pool = ins_pool[rs.permutation(len(ins_pool))]
    coins = rs.uniform(b)
    di = ii = flips = 0
    for step in range(b):
        delete = coins[step] < 0.5
        if delete and di >= len(del_pool):
            delete = False
        if not delete and ii >= len(ins_pool):
            if di < len(del_pool):
                delete = True
            else:
                break  # both pools exhausted
        if delete:
            p = del_pool[di]
            di += 1
            adj[iu[p], ju[p]] = 0.0
            adj[ju[p], iu[p]] = 0.0
        else:
            p = ins_pool[ii]
            ii += 1
            adj[iu[p], ju[p]] = 1.0
            adj[ju[p], iu[p]] = 1.0
        flips += 1
    return _structural_result(g, adj)


def project_budget(s, cap: float):
    """Euclidean projection onto ``{s in [0,1]^d : sum(s) <= cap}``.

    Bisection on the Lagrange multiplier of the sum constraint.
    """
    s = np.asarray(s, dtype=np.float64)
    clipped = np.clip(s, 0.0, 1.0)
    if clipped.sum() <= cap:
        return clipped
    lo, hi = 0.0, float(s.max())
    for _ in range(100):
        mu = 0.5 * (lo + hi)
        if np.clip(s - mu, 0.0, 1.0).sum() > cap:
            lo = mu
        else:
            hi = mu
    return np.clip(s - hi, 0.0, 1.0)


def _relaxed_adjacency(adj, sign, s, iu, ju):
    m = np.array(adj)
    m[iu, ju] = adj[iu, ju] + sign * s
    m[ju, iu] = m[iu, ju]
    return m


def _structure_loss_grad(g, params, s, iu, ju, sign, self_loops):
    """Attack loss of the relaxed adjacency A + (1-2A) o s and its
    gradient w.r.t. s, differentiated through the operator construction."""
    m = _relaxed_adjacency(g.adjacency, sign, s, iu, ju)
    if params.arch == "gcn":
        mn = np.array(m)
        if self_loops:
            mn[np.diag_indices_from(mn)] += 1.0
        d = mn.sum(axis=1)
        r = np.where(d > 0.0, 1.0 / np.sqrt(np.where(d > 0.0, d, 1.0)), 0.0)
        op = mn * r[:, None] * r[None, :]
        loss, d_op, _ = mdl.loss_input_grads(params, op, g.features,
                                             g.labels, g.test_mask)
        # op_ij = Mn_ij r_i r_j with r_i = d_i^{-1/2}: changing Mn_ab
        # rescales row/column a through d_a.
        gm = d_op * mn
        t = gm @ r
        u = gm.T @ r
        dr = np.where(d > 0.0, -0.5 * np.where(d > 0.0, d, 1.0) ** -1.5, 0.0)
        d_mn = d_op * np.outer(r, r) + (dr * (t + u))[:, None]
        d_s = sign * (d_mn[iu, ju] + d_mn[ju, iu])
    else:
        op = m + (1.0 + params.lam) * np.eye(g.n)
        loss, d_op, _ = mdl.loss_input_grads(params, op, g.features,
                                             g.labels, g.test_mask)
        d_s = sign * (d_op[iu, ju] + d_op[ju, iu])
    return loss, d_s


def _discrete_attack_loss(g, params, adj, self_loops):
    attacked = g.with_adjacency(adj)
    op = build_operator(attacked, params.operator_variant(),
                        self_loops=self_loops, lam=params.lam)
    loss, _, _ = mdl.loss_input_grads(params, op, g.features, g.labels,
                                      g.test_mask)
    return loss


def pgd_structure(g: Graph, params, flip_fraction: float, rs: RandomSource,
                  steps=100, step_size=0.5, tries=20,
                  self_loops=False) -> AttackResult:
    """Projected gradient ascent on a relaxed edge-flip variable.

    Maintains ``s`` over node pairs, ascends the test-mask cross-entropy
    through the operator construction, projects onto the budget polytope
    after every step, then discretizes by Bernoulli sampling (best
    feasible sample out of ``tries``; deterministic top-b fallback if no
    draw is feasible).
    """
    if g.features is None or g.labels is None or g.test_mask is None:
        raise ValueError("pgd_structure needs features, labels and test mask")
    b = structural_budget(g, flip_fraction)
    if b == 0:
        return _structural_result(g, np.array(g.adjacency), params, self_loops)
    iu, ju = np.triu_indices(g.n, k=1)
    a_pairs = g.adjacency[iu, ju]
    sign = 1.0 - 2.0 * a_pairs
    s = np.zeros(len(iu))
    trajectory = []
    for step in range(steps):
        loss, d_s = _structure_loss_grad(g, params, s, iu, ju, sign,
                                         self_loops)
        if not np.all(np.isfinite(d_s)):
            raise RuntimeError(f"pgd_structure: non-finite gradient at step {step}")
        trajectory.append(loss)
        s = project_budget(s + step_size * d_s, float(b))
    best_adj = None
    best_loss = -np.inf
    for t in range(tries):
        flips = rs.uniform(len(s)) < s
        if int(flips.sum()) > b:
            continue
        adj = np.array(g.adjacency)
        pi, pj = iu[flips], ju[flips]
        adj[pi, pj] = 1.0 - adj[pi, pj]
        adj[pj, pi] = adj[pi, pj]
        loss = _discrete_attack_loss(g, params, adj, self_loops)
        if loss > best_loss:
            best_loss = loss
            best_adj = adj
    if best_adj is None:
        order = np.argsort(-s)[:b]
        keep = order[s[order] > 0.0]
        adj = np.array(g.adjacency)
        pi, pj = iu[keep], ju[keep]
        adj[pi, pj] = 1.0 - adj[pi, pj]
        adj[pj, pi] = adj[pi, pj]
        best_adj = adj
        best_loss = _discrete_attack_loss(g, params, adj, self_loops)
    return _structural_result(g, best_adj, params, self_loops,
                              trajectory, best_loss)


def pgd_features(g: Graph, params, radius: float, steps=100, step_size=0.1,
                 self_loops=False) -> AttackResult:
    """Gradient ascent on the features with L2-ball projection.

    The perturbation is projected onto the Frobenius ball of the given
    radius after every step, which also caps its spectral norm — the
    budget the feature-perturbation bounds are stated in. Deterministic.
    """
    if g.features is None or g.labels is None or g.test_mask is None:
        raise ValueError("pgd_features needs features, labels and test mask")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return AttackResult(g.with_features(np.array(g.features)))
    op = build_operator(g, params.operator_variant(), self_loops=self_loops,
                        lam=params.lam)
    x0 = np.array(g.features)
    x = x0.copy()
    trajectory = []
    for _ in range(steps):
        loss, _, d_x = mdl.loss_input_grads(params, op, x, g.labels,
                                            g.test_mask)
        trajectory.append(loss)
        x = x + step_size * d_x
        delta = x - x0
        norm = np.linalg.norm(delta)
        if norm > radius:
            delta *= radius / norm
        x = x0 + delta
    final_loss, _, _ = mdl.loss_input_grads(params, op, x, g.labels,
                                            g.test_mask)
    trajectory.append(final_loss)
    attacked = g.with_features(x)
    dist = spectral_norm(x - x0) if np.any(x != x0) else 0.0
    return AttackResult(attacked, 0, dist, trajectory)


def gaussian_feature_noise(g: Graph, xi: float, rs: RandomSource) -> AttackResult:
    """Add xi-scaled standard Gaussian noise to every feature entry."""
    if g.features is None:
        raise ValueError("gaussian_feature_noise needs features")
    if xi < 0:
        raise ValueError("xi must be >= 0")
    if xi == 0:
        return AttackResult(g.with_features(np.array(g.features)))
    x = g.features + xi * rs.normal(g.features.shape)
    dist = spectral_norm(x - g.features)
    return AttackResult(g.with_features(x), 0, dist)
