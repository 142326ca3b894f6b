"""Split objectives for the forest engine.

A splitter turns the samples of a node into pseudo-outcomes ``rho`` whose
weighted sums drive the CART gain ``S_L^2/W_L + S_R^2/W_R``. Three objectives
are provided, each mapped to a kernel mode so that the compiled and numpy
backends can evaluate it without calling back into Python.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _pykernels as _pk


def _as_f64(v, n, name):
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class Splitter:
    """Base class; subclasses fill the per-sample kernel arrays."""

    mode: int = -1

    def __init__(self, n: int, weights=None):
        self.n = int(n)
        self.weights = np.ones(self.n) if weights is None else _as_f64(weights, self.n, "weights")
        if np.any(self.weights <= 0):
            raise ValueError("sample weights must be positive")
        self.y = self.a = self.b = self.event = self.pre = np.zeros(self.n)
        self.tidx = np.zeros(self.n, dtype=np.int64)
        self.n_grid = 1

    def kernel_args(self):
        return (self.mode, self.y, self.a, self.b, self.weights, self.tidx,
                self.event, self.pre, self.n_grid)

    def relabel(self, idx):
        """Pseudo-outcomes for node ``idx`` (ascending), or ``None`` if unsplittable."""
        idx = np.asarray(idx, dtype=np.int64)
        return _pk.relabel(self.mode, idx, self.y, self.a, self.b, self.weights,
                           self.tidx, self.event, self.pre, self.n_grid)


class RegressionSplitter(Splitter):
    """Standard CART on a continuous response: ``rho = y - node mean``."""

    mode = _pk.MODE_REGRESSION

    def __init__(self, y, weights=None):
        y = np.asarray(y)
        super().__init__(y.shape[0], weights)
        self.y = _as_f64(y, self.n, "y")


class CausalSplitter(Splitter):
    """Gradient-based splitting for a linear estimating equation ``a - tau*b``.

    At a node the local solve is ``tau = sum(w*a)/sum(w*b)`` and the
    pseudo-outcome is ``(a_i - tau*b_i) / sum(w*b)``. Nodes whose denominator
    vanishes are left unsplit.
    """

    mode = _pk.MODE_CAUSAL

    def __init__(self, a, b, weights=None):
        a = np.asarray(a)
        super().__init__(a.shape[0], weights)
        self.a = _as_f64(a, self.n, "a")
        self.b = _as_f64(b, self.n, "b")


class SurvivalSplitter(Splitter):
    """Survival CART via node-level martingale residuals.

    ``rho_i = event_i - Lambda(t_i)`` with ``Lambda`` the node's Nelson-Aalen
    cumulative hazard on the grid. ``pre`` flags samples that leave the risk
    set just before the events recorded at their own grid time.
    """

    mode = _pk.MODE_SURVIVAL

    def __init__(self, tidx, event, n_grid, pre=None, weights=None):
        tidx = np.ascontiguousarray(tidx, dtype=np.int64)
        super().__init__(tidx.shape[0], weights)
        if tidx.size and (tidx.min() < 0 or tidx.max() >= n_grid):
            raise ValueError("grid indices out of range")
        self.tidx = tidx
        self.event = _as_f64(event, self.n, "event")
        self.pre = np.zeros(self.n) if pre is None else _as_f64(pre, self.n, "pre")
        self.n_grid = int(n_grid)


@dataclass(frozen=True)
class SplitDecision:
    feature: int
    threshold: float
    gain: float
    n_left: int


def best_split(X, node, rho, config, rng=None, features=None, weights=None):
    """Best admissible split of ``node`` for pseudo-outcomes ``rho``.

    Parameters
    ----------
    X : ndarray (n, p)
    node : array of int
        Sample indices in the node; sorted internally.
    rho : array
        Pseudo-outcomes aligned with ``node``.
    config : ForestConfig
        Supplies ``mtry``, ``min_node_size`` and ``child_balance``.
    rng : int or SplitMix64, optional
        Stream used to draw the ``mtry`` candidate features.
    features : sequence of int, optional
        Explicit candidate features (overrides ``rng``).
    weights : array, optional
        Per-node-sample weights; unit weights give the count-normalized gain.

    Returns
    -------
    SplitDecision or None
        ``None`` when no admissible split beats the no-split value.
    """
    X = np.asarray(X, dtype=np.float64)
    node = np.asarray(node, dtype=np.int64)
    rho = np.asarray(rho, dtype=np.float64)
    w = np.ones(node.size) if weights is None else np.asarray(weights, dtype=np.float64)
    o = np.argsort(node, kind="stable")
    node, rho, w = node[o], rho[o], w[o]
    p = X.shape[1]
    if features is None:
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = _pk.SplitMix64(0 if rng is None else int(rng))
        features = _pk.draw_features(rng, p, config.resolved_mtry(p))
    if node.size < 2 * config.min_node_size:
        return None
    found = _pk.scan_split(X, node, rho, w, list(features), config.min_node_size, config.child_balance)
    if found is None:
        return None
    return SplitDecision(*found)
