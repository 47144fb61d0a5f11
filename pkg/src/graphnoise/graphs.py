"""Graph representation, file IO, message-passing operators, synthetic
planted-partition datasets, and input-space distances.

File formats
------------
* edge list: whitespace-separated integer pairs, one per line. ``#``
  starts a comment; a leading ``# n=<count>`` comment declares the node
  count (needed to preserve trailing isolated nodes).
* features / labels / masks: headerless CSV, row i = node i. Labels may
  alternatively be ``node,label`` pairs. Masks have three 0/1 columns
  (train, val, test).
"""

import os
from dataclasses import dataclass

import numpy as np

from .linalg import RandomSource, as_matrix, spectral_norm


def _frozen(a):
    out = np.array(a)
    out.flags.writeable = False
    return out


@dataclass
class Graph:
    """Undirected graph with optional features, labels and split masks.

    Arrays are copied and frozen at construction; graphs are immutable
    and safe to share across concurrent readers.
    """

    adjacency: np.ndarray
    features: np.ndarray = None
    labels: np.ndarray = None
    train_mask: np.ndarray = None
    val_mask: np.ndarray = None
    test_mask: np.ndarray = None

    def __post_init__(self):
        a = as_matrix(self.adjacency)
        n = a.shape[0]
        if a.shape[1] != n:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("adjacency entries must be 0 or 1")
        self.adjacency = _frozen(a)
        if self.features is not None:
            x = as_matrix(self.features)
            if x.shape[0] != n:
                raise ValueError(f"features have {x.shape[0]} rows for n={n}")
            self.features = _frozen(x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (n,):
                raise ValueError(f"labels must have shape ({n},)")
            if y.min() < 0:
                raise ValueError("labels must be non-negative class indices")
            self.labels = _frozen(y)
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=bool)
                if m.shape != (n,):
                    raise ValueError(f"{name} must have shape ({n},)")
                setattr(self, name, _frozen(m))
                masks.append(np.asarray(m))
        if len(masks) > 1:
            total = np.sum(masks, axis=0)
            if total.max() > 1:
                raise ValueError("train/val/test masks must be disjoint")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels is not None else 0

    @property
    def num_edges(self) -> int:
        """Undirected edge count (strictly upper-triangular ones)."""
        return int(np.triu(self.adjacency, k=1).sum())

    def with_adjacency(self, adjacency) -> "Graph":
        return Graph(adjacency, self.features, self.labels,
                     self.train_mask, self.val_mask, self.test_mask)

    def with_features(self, features) -> "Graph":
        return Graph(self.adjacency, features, self.labels,
                     self.train_mask, self.val_mask, self.test_mask)


GCN_NORMALIZED = "gcn_normalized"
GIN_AUGMENTED = "gin_augmented"


@dataclass
class MessagePassingOperator:
    """The n x n matrix that propagates node states each layer."""

    matrix: np.ndarray
    variant: str
    self_loops: bool = False
    lam: float = 0.0

    def __post_init__(self):
        self.matrix = _frozen(as_matrix(self.matrix))


def normalized_adjacency(adj, self_loops=False) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} with zero rows for isolated nodes.

    Accepts fractional non-negative adjacencies (used by the relaxed
    structure attack). Degree-zero rows map to zero, keeping the
    operator norm at most one.
    """
    a = np.array(adj, dtype=np.float64)
    if self_loops:
        a[np.diag_indices_from(a)] += 1.0
    d = a.sum(axis=1)
    with np.errstate(divide="ignore"):
        r = np.where(d > 0.0, 1.0 / np.sqrt(np.where(d > 0.0, d, 1.0)), 0.0)
    return a * r[:, None] * r[None, :]


def build_operator(g: Graph, variant=GCN_NORMALIZED, self_loops=False,
                   lam=0.0) -> MessagePassingOperator:
    """Build the message-passing operator for a graph.

    ``gcn_normalized``: optionally add self-loops, then symmetric degree
    normalization. ``gin_augmented``: adjacency plus (1 + lam) * identity.
    """
    if variant == GCN_NORMALIZED:
        mat = normalized_adjacency(g.adjacency, self_loops=self_loops)
        if mat.min() < 0:  # pragma: no cover - adjacency is non-negative
            raise ValueError("gcn operator has negative entries")
        return MessagePassingOperator(mat, variant, self_loops=self_loops)
    if variant == GIN_AUGMENTED:
        mat = np.array(g.adjacency) + (1.0 + lam) * np.eye(g.n)
        return MessagePassingOperator(mat, variant, lam=lam)
    raise ValueError(f"unknown operator variant {variant!r}")


def graph_distance(g1: Graph, g2: Graph) -> float:
    """Spectral distance between graphs at the identity permutation.

    ``||A1 - A2||_2 + ||X1 - X2||_2``. Minimizing over node permutations
    is isomorphism-hard; evaluating at the identity upper-bounds that
    metric and is exact for in-place perturbations, which is the threat
    model throughout.
    """
    if g1.n != g2.n:
        raise ValueError(f"node counts differ: {g1.n} vs {g2.n}")
    dist = 0.0
    diff = g1.adjacency - g2.adjacency
    if np.any(diff):
        dist += spectral_norm(diff)
    if (g1.features is None) != (g2.features is None):
        raise ValueError("one graph has features and the other does not")
    if g1.features is not None:
        if g1.features.shape != g2.features.shape:
            raise ValueError("feature dimensions differ")
        fdiff = g1.features - g2.features
        if np.any(fdiff):
            dist += spectral_norm(fdiff)
    return dist


def operator_distance(g1: Graph, g2: Graph, variant=GCN_NORMALIZED,
                      self_loops=False, lam=0.0) -> float:
    """``||op(g1) - op(g2)||_2`` — the quantity the robustness proofs bound."""
    op1 = build_operator(g1, variant, self_loops=self_loops, lam=lam)
    op2 = build_operator(g2, variant, self_loops=self_loops, lam=lam)
    diff = op1.matrix - op2.matrix
    if not np.any(diff):
        return 0.0
    return spectral_norm(diff)


def edge_flip_count(g1: Graph, g2: Graph) -> int:
    """Number of strictly-upper-triangular entries that differ."""
    if g1.n != g2.n:
        raise ValueError(f"node counts differ: {g1.n} vs {g2.n}")
    iu, ju = np.triu_indices(g1.n, k=1)
    return int(np.sum(g1.adjacency[iu, ju] != g2.adjacency[iu, ju]))


@dataclass
class SbmSpec:
    """Planted-partition generator settings."""

    n: int
    classes: int
    p_in: float
    p_out: float
    feature_dim: int = 16
    separation: float = 1.0
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mask fractions sum to {total}, not 1")
        if self.n < self.classes:
            raise ValueError("need at least one node per class")


def generate_sbm(spec: SbmSpec, rs: RandomSource) -> Graph:
    """Sample a planted-partition graph with Gaussian class-mean features.

    Labels are contiguous blocks; edges appear with probability p_in
    inside a block and p_out across blocks; node features are the class
    mean (drawn N(0, separation^2) per coordinate) plus unit noise.
    """
    n, c = spec.n, spec.classes
    labels = (np.arange(n) * c) // n
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p_in, spec.p_out)
    u = rs.uniform((n, n))
    upper = np.triu(u < prob, k=1)
    adj = (upper | upper.T).astype(np.float64)
    means = spec.separation * rs.normal((c, spec.feature_dim))
    feats = means[labels] + rs.normal((n, spec.feature_dim))
    perm = rs.permutation(n)
    n_train = int(np.floor(spec.train_frac * n))
    n_val = int(np.floor(spec.val_frac * n))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train : n_train + n_val]] = True
    test[perm[n_train + n_val :]] = True
    return Graph(adj, feats, labels, train, val, test)


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def _parse_edge_file(path, n=None):
    declared = n
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)
            comment = line[1] if len(line) > 1 else ""
            body = line[0].strip()
            if declared is None and "n=" in comment.replace(" ", ""):
                try:
                    declared = int(comment.replace(" ", "").split("n=")[1])
                except ValueError:
                    pass
            if not body:
                continue
            tokens = body.split()
            if len(tokens) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'u v', got {body!r}"
                )
            try:
                u, v = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-integer node index in {body!r}"
                ) from None
            if u < 0 or v < 0:
                raise ValueError(f"{path}:{lineno}: negative node index")
            pairs.append((lineno, u, v))
    if declared is None:
        declared = 1 + max((max(u, v) for _, u, v in pairs), default=-1)
    adj = np.zeros((declared, declared))
    for lineno, u, v in pairs:
        if u >= declared or v >= declared:
            raise ValueError(
                f"{path}:{lineno}: node index {max(u, v)} out of range "
                f"for n={declared}"
            )
        adj[u, v] = 1.0
        adj[v, u] = 1.0
    return adj


def _read_csv_rows(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            body = raw.split("#", 1)[0].strip()
            if not body:
                continue
            rows.append((lineno, [t.strip() for t in body.split(",")]))
    return rows


def _parse_labels(path, n):
    rows = _read_csv_rows(path)
    if not rows:
        raise ValueError(f"{path}: empty label file")
    width = len(rows[0][1])
    labels = np.full(n, -1, dtype=np.int64)
    if width == 1:
        if len(rows) != n:
            raise ValueError(f"{path}: {len(rows)} label rows for n={n}")
        for i, (lineno, toks) in enumerate(rows):
            try:
                labels[i] = int(toks[0])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-integer label {toks[0]!r}"
                ) from None
    elif width == 2:
        for lineno, toks in rows:
            try:
                node, lab = int(toks[0]), int(toks[1])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-integer entry {toks!r}"
                ) from None
            if node < 0 or node >= n:
                raise ValueError(
                    f"{path}:{lineno}: node index {node} out of range for n={n}"
                )
            if labels[node] != -1 and labels[node] != lab:
                raise ValueError(
                    f"{path}:{lineno}: contradictory label for node {node}: "
                    f"{labels[node]} vs {lab}"
                )
            labels[node] = lab
        if np.any(labels < 0):
            missing = int(np.argmax(labels < 0))
            raise ValueError(f"{path}: node {missing} has no label")
    else:
        raise ValueError(f"{path}: label rows must have 1 or 2 columns")
    return labels


def _parse_features(path, n):
    rows = _read_csv_rows(path)
    if len(rows) != n:
        raise ValueError(f"{path}: {len(rows)} feature rows for n={n}")
    width = len(rows[0][1])
    feats = np.zeros((n, width))
    for i, (lineno, toks) in enumerate(rows):
        if len(toks) != width:
            raise ValueError(
                f"{path}:{lineno}: expected {width} columns, got {len(toks)}"
            )
        try:
            feats[i] = [float(t) for t in toks]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric feature") from None
    return feats


def _parse_masks(path, n):
    rows = _read_csv_rows(path)
    if len(rows) != n:
        raise ValueError(f"{path}: {len(rows)} mask rows for n={n}")
    masks = np.zeros((n, 3), dtype=bool)
    for i, (lineno, toks) in enumerate(rows):
        if len(toks) != 3:
            raise ValueError(
                f"{path}:{lineno}: expected 3 mask columns (train,val,test)"
            )
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-integer mask entry") from None
        if any(v not in (0, 1) for v in vals):
            raise ValueError(f"{path}:{lineno}: mask entries must be 0 or 1")
        masks[i] = vals
    return masks[:, 0], masks[:, 1], masks[:, 2]


def load_graph(edge_path, feature_path=None, label_path=None,
               mask_path=None, n=None) -> Graph:
    """Load a graph from an edge list plus optional CSV side files.

    An absent feature file gives identity features of width n, the
    convention for datasets that ship no node attributes.
    """
    adj = _parse_edge_file(edge_path, n=n)
    n = adj.shape[0]
    if feature_path is not None and os.path.exists(feature_path):
        feats = _parse_features(feature_path, n)
    else:
        feats = np.eye(n)
    labels = _parse_labels(label_path, n) if label_path else None
    train = val = test = None
    if mask_path:
        train, val, test = _parse_masks(mask_path, n)
    return Graph(adj, feats, labels, train, val, test)


def save_graph(g: Graph, edge_path, feature_path=None, label_path=None,
               mask_path=None):
    """Write a graph back to the edge-list / CSV formats (round-trip exact)."""
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={g.n}\n")
        iu, ju = np.nonzero(np.triu(g.adjacency))
        for u, v in zip(iu, ju):
            fh.write(f"{u} {v}\n")
    if feature_path and g.features is not None:
        with open(feature_path, "w", encoding="utf-8") as fh:
            for row in g.features:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
    if label_path and g.labels is not None:
        with open(label_path, "w", encoding="utf-8") as fh:
            for lab in g.labels:
                fh.write(f"{int(lab)}\n")
    if mask_path and g.train_mask is not None:
        with open(mask_path, "w", encoding="utf-8") as fh:
            for i in range(g.n):
                fh.write(
                    f"{int(g.train_mask[i])},{int(g.val_mask[i])},"
                    f"{int(g.test_mask[i])}\n"
                )
