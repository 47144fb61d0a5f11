"""Shared builders for small test graphs and models."""

import numpy as np
import pytest

from graphnoise.graphs import Graph, SbmSpec, generate_sbm
from graphnoise.linalg import RandomSource
from graphnoise.model import init_params


def path_graph(n, features=None, labels=None):
    adj = np.zeros((n, n))
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1.0
    return Graph(adj, features, labels)


def random_graph(rs, n, p=0.3, k=6, classes=3, with_masks=True):
    u = rs.uniform((n, n))
    upper = np.triu(u < p, k=1)
    adj = (upper | upper.T).astype(float)
    feats = rs.normal((n, k))
    labels = rs.integers(0, classes, size=n)
    if not with_masks:
        return Graph(adj, feats, labels)
    third = n // 3
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[:third] = True
    val[third : 2 * third] = True
    test[2 * third :] = True
    return Graph(adj, feats, labels, train, val, test)


def random_params(rs, in_dim, hidden=8, classes=3, arch="gcn",
                  activation="tanh", lam=0.0):
    return init_params(rs, in_dim, hidden, classes, arch=arch,
                       activation=activation, lam=lam)


def easy_sbm(seed=0, n=90, classes=3, separation=2.0):
    spec = SbmSpec(n=n, classes=classes, p_in=0.9, p_out=0.05,
                   feature_dim=8, separation=separation)
    return generate_sbm(spec, RandomSource(seed))


@pytest.fixture
def rs():
    return RandomSource(12345)
