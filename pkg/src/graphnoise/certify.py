"""Sparse randomized-smoothing certificates for node predictions.

The smoothed classifier votes over graphs whose off-diagonal bits are
flipped independently (edges off w.p. ``p_minus``, non-edges on w.p.
``p_plus``). A node's majority class is certified against an adversary
who may add ``r_a`` edges and delete ``r_d`` if the worst-case
Neyman-Pearson classifier consistent with the vote lower bound still
returns that class with probability above 1/2 under the perturbed
graph's smoothing distribution.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .graphs import Graph
from .linalg import RandomSource
from .model import ModelParams, NoiseConfig


@dataclass
class SmoothingConfig:
    p_plus: float = 0.001
    p_minus: float = 0.4
    n_selection: int = 1000
    n_estimation: int = 10000
    alpha: float = 0.01
    chunk: int = 64

    def __post_init__(self):
        for name in ("p_plus", "p_minus"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {p}")
        if self.n_selection < 1 or self.n_estimation < 1:
            raise ValueError("sample counts must be >= 1")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0,1)")


@dataclass
class CertificateGrid:
    r_a_max: int
    r_d_max: int
    nodes: np.ndarray        # test node ids
    pred_class: np.ndarray   # candidate class per test node
    p_lower: np.ndarray      # Clopper-Pearson lower bound per test node
    abstain: np.ndarray      # p_lower <= 1/2
    correct: np.ndarray      # candidate equals the true label
    certified: np.ndarray    # test nodes x (r_a_max+1) x (r_d_max+1)
    s_grid: np.ndarray       # certified accuracy S(r_a, r_d)

    def grid_sum(self) -> float:
        return float(self.s_grid.sum())


# ---------------------------------------------------------------------------
# Vote sampling
# ---------------------------------------------------------------------------

def _run_votes(g, params, noise, cfg, rs, n_samples, self_loops, threads=1):
    n = g.n
    iu, ju = np.triu_indices(n, k=1)
    iu = iu.astype(np.int64)
    ju = ju.astype(np.int64)
    adj = np.ascontiguousarray(g.adjacency)
    p1 = _kernels.matmul(np.ascontiguousarray(g.features), params.W1)
    op_kind = 0 if params.arch == "gcn" else 1
    act_kind = 0 if params.activation == "tanh" else 1
    inject = noise is not None and noise.active(training=False)
    noise_layer = noise.inject_after_layer if inject else 0
    noise_std = math.sqrt(noise.beta) if inject else 0.0
    e = params.W1.shape[1]
    votes = np.zeros((n, params.readout_W.shape[1]), dtype=np.int64)
    done = 0
    chunk_id = 0
    while done < n_samples:
        size = min(cfg.chunk, n_samples - done)
        crs = rs.child(chunk_id)
        uni = crs.uniform((size, len(iu)))
        z1 = crs.normal((size, n, e)) if noise_layer == 1 else np.zeros((0, n, e))
        z2 = crs.normal((size, n, e)) if noise_layer == 2 else np.zeros((0, n, e))
        _kernels.vote_chunk(adj, iu, ju, uni, cfg.p_plus, cfg.p_minus,
                            p1, params.W2, params.readout_W,
                            params.readout_b, op_kind, self_loops,
                            1.0 + params.lam, act_kind, noise_std,
                            noise_layer, z1, z2, votes)
        done += size
        chunk_id += 1
    return votes


def sample_votes(g: Graph, params: ModelParams, noise: NoiseConfig,
                 cfg: SmoothingConfig, rs: RandomSource, self_loops=False):
    """Tally per-node argmax votes over sparsified graphs.

    Returns ``(selection_votes, estimation_votes)``, two n x classes
    integer arrays; the selection batch picks the candidate class, the
    estimation batch feeds the confidence bound. The base model keeps
    its own hidden-noise configuration, as deployed.
    """
    if g.features is None:
        raise ValueError("sample_votes needs node features")
    sel = _run_votes(g, params, noise, cfg, rs.child(0), cfg.n_selection,
                     self_loops)
    est = _run_votes(g, params, noise, cfg, rs.child(1), cfg.n_estimation,
                     self_loops)
    return sel, est


# ---------------------------------------------------------------------------
# Exact binomial lower confidence bound
# ---------------------------------------------------------------------------

def _log_binom_tail(n, k, log_p, log_q):
    """log P(Bin(n, p) >= k) via a stable log-sum-exp over j = k..n."""
    logs = [
        math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1)
        + j * log_p + (n - j) * log_q
        for j in range(k, n + 1)
    ]
    top = max(logs)
    if top == -math.inf:
        return -math.inf
    return top + math.log(sum(math.exp(x - top) for x in logs))


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """One-sided exact lower confidence bound for a binomial proportion.

    The largest p whose upper tail P(Bin(n,p) >= k) stays at or below
    ``alpha``, found by bisection on the exact log-space tail. k = 0
    gives 0.
    """
    if not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must be in (0,1)")
    if k == 0:
        return 0.0
    log_alpha = math.log(alpha)
    lo, hi = 0.0, 1.0
    for _ in range(80):
        p = 0.5 * (lo + hi)
        tail = _log_binom_tail(n, k, math.log(p), math.log1p(-p))
        if tail > log_alpha:
            hi = p
        else:
            lo = p
    return lo


# ---------------------------------------------------------------------------
# Worst-case certificate over the targeted bits
# ---------------------------------------------------------------------------

def radius_degenerate(p_plus: float, p_minus: float, r_a: int, r_d: int) -> bool:
    """A zero flip probability on a targeted bit type makes the
    likelihood ratio degenerate: no certificate is possible there."""
    return (p_plus == 0.0 and r_a > 0) or (p_minus == 0.0 and r_d > 0)


def _regions(p_plus, p_minus, r_a, r_d):
    """Joint-outcome regions indexed by how many targeted bits end ON.

    Returns ``(log_clean, log_pert)`` arrays over (q_a, q_d). Adversarial
    additions are clean non-edges / perturbed edges; deletions the
    reverse - the per-bit ON/OFF masses swap roles between the two
    distributions.
    """
    def log_terms(r, q, lp, lq):
        # log C(r, q) + q lp + (r - q) lq, with 0 * -inf := 0
        out = math.lgamma(r + 1) - math.lgamma(q + 1) - math.lgamma(r - q + 1)
        if q:
            out += q * lp
        if r - q:
            out += (r - q) * lq
        return out

    def safe_log(x):
        return math.log(x) if x > 0.0 else -math.inf

    lpp, lqp = safe_log(p_plus), safe_log(1.0 - p_plus)
    lpm, lqm = safe_log(p_minus), safe_log(1.0 - p_minus)
    log_clean = np.empty((r_a + 1, r_d + 1))
    log_pert = np.empty((r_a + 1, r_d + 1))
    for qa in range(r_a + 1):
        add_clean = log_terms(r_a, qa, lpp, lqp)   # non-edge ON w.p. p_plus
        add_pert = log_terms(r_a, qa, lqm, lpm)    # edge ON w.p. 1 - p_minus
        for qd in range(r_d + 1):
            del_clean = log_terms(r_d, qd, lqm, lpm)
            del_pert = log_terms(r_d, qd, lpp, lqp)
            log_clean[qa, qd] = add_clean + del_clean
            log_pert[qa, qd] = add_pert + del_pert
    return log_clean, log_pert


def certify_radius(p_lower: float, p_plus: float, p_minus: float,
                   r_a: int, r_d: int) -> bool:
    """Binary certificate against ``r_a`` additions and ``r_d`` deletions.

    Partitions the sample space by the joint outcome of the targeted
    bits, assigns the ``p_lower`` clean-graph mass to regions in
    ascending perturbed/clean likelihood-ratio order (splitting the
    boundary region fractionally), and certifies iff the accumulated
    perturbed-graph mass exceeds 1/2.
    """
    if not (0.0 <= p_lower <= 1.0):
        raise ValueError("p_lower must be in [0,1]")
    if r_a < 0 or r_d < 0:
        raise ValueError("radii must be >= 0")
    if r_a == 0 and r_d == 0:
        return p_lower > 0.5
    if radius_degenerate(p_plus, p_minus, r_a, r_d):
        return False
    log_clean, log_pert = _regions(p_plus, p_minus, r_a, r_d)
    log_clean = log_clean.ravel()
    log_pert = log_pert.ravel()
    usable = log_clean > -math.inf  # zero clean mass: no capacity to assign
    log_clean = log_clean[usable]
    log_pert = log_pert[usable]
    ratio = log_pert - log_clean
    order = np.argsort(ratio, kind="stable")
    remaining = p_lower
    pert_mass = 0.0
    for idx in order:
        if remaining <= 0.0:
            break
        clean = math.exp(log_clean[idx])
        take = min(remaining, clean)
        pert_mass += take * math.exp(ratio[idx])
        remaining -= take
    return pert_mass > 0.5


def certified_accuracy_grid(g: Graph, params: ModelParams,
                            noise: NoiseConfig, cfg: SmoothingConfig,
                            r_a_max: int, r_d_max: int, rs: RandomSource,
                            self_loops=False) -> CertificateGrid:
    """Certify every test node over the (r_a, r_d) grid.

    ``S(r_a, r_d)`` is the fraction of test nodes whose candidate class
    matches the true label and is certified at that radius pair;
    abstaining nodes (p_lower <= 1/2) are never certified.
    """
    if g.test_mask is None or g.labels is None:
        raise ValueError("certification needs labels and a test mask")
    nodes = np.nonzero(g.test_mask)[0]
    if len(nodes) == 0:
        raise ValueError("test mask selects no nodes")
    sel, est = sample_votes(g, params, noise, cfg, rs, self_loops=self_loops)
    pred = np.argmax(sel, axis=1)
    n_nodes = len(nodes)
    p_low = np.zeros(n_nodes)
    for i, v in enumerate(nodes):
        k = int(est[v, pred[v]])
        p_low[i] = clopper_pearson_lower(k, cfg.n_estimation, cfg.alpha)
    abstain = p_low <= 0.5
    correct = pred[nodes] == g.labels[nodes]
    certified = np.zeros((n_nodes, r_a_max + 1, r_d_max + 1), dtype=bool)
    for i in range(n_nodes):
        if abstain[i]:
            continue
        for ra in range(r_a_max + 1):
            for rd in range(r_d_max + 1):
                certified[i, ra, rd] = certify_radius(
                    p_low[i], cfg.p_plus, cfg.p_minus, ra, rd
                )
    s_grid = (certified & correct[:, None, None]).mean(axis=0)
    return CertificateGrid(
        r_a_max=r_a_max, r_d_max=r_d_max, nodes=nodes,
        pred_class=pred[nodes], p_lower=p_low, abstain=abstain,
        correct=correct, certified=certified, s_grid=s_grid,
    )
