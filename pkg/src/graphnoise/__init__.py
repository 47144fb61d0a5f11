"""Noise-injected GCN/GIN node classifiers: training, adversarial
attacks, purification defenses, closed-form robustness bounds, and
randomized-smoothing certificates."""

__version__ = "0.1.0"

from ._kernels import BACKEND, NUMBA_ENABLED  # noqa: F401
