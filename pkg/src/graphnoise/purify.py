"""Pre-processing defenses: Jaccard edge pruning and low-rank
reconstruction of the adjacency matrix.

Both are graph-in graph-out and compose with noise-injected training
(purify first, then train on the cleaned graph).
"""

import numpy as np

from .graphs import Graph
from .linalg import truncated_svd


def jaccard_purify(g: Graph, threshold: float) -> Graph:
    """Drop edges whose endpoint feature supports have Jaccard
    similarity below ``threshold``.

    Similarity is computed on the nonzero patterns of the features
    (real-valued features are thresholded at zero); a pair of empty
    supports counts as similarity 0. Never adds edges.
    """
    if g.features is None:
        raise ValueError("jaccard_purify needs node features")
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0,1], got {threshold}")
    supp = (g.features != 0.0).astype(np.float64)
    inter = supp @ supp.T
    sizes = supp.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    adj = np.array(g.adjacency)
    adj[(adj > 0) & (sim < threshold)] = 0.0
    return g.with_adjacency(adj)


def svd_purify(g: Graph, rank: int, binarize_threshold: float = 0.5) -> Graph:
    """Rank-``rank`` reconstruction of the adjacency, binarized.

    Entries of the low-rank reconstruction at or above the threshold
    become edges; the result is re-symmetrized by OR and the diagonal
    zeroed.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > g.n:
        raise ValueError(f"rank {rank} exceeds node count {g.n}")
    u, s, v = truncated_svd(g.adjacency, rank)
    recon = (u * s[None, :]) @ v.T
    adj = (recon >= binarize_threshold).astype(np.float64)
    adj = np.maximum(adj, adj.T)  # symmetrize by OR
    adj[np.diag_indices_from(adj)] = 0.0
    return g.with_adjacency(adj)
