"""Honest subsampled forests with little-bag grouping.

Trees are stored flattened: ``node_ptr[b]:node_ptr[b+1]`` delimits tree ``b``
in the ``feature``/``threshold``/``left``/``right`` arrays (children are local
to their tree, leaves have ``feature == -1``). Each tree keeps the indices it
used for split selection and the disjoint indices that populate its leaves.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import FitError, NoOOBError
from ._backend import get_kernels
from .config import ForestConfig
from .splitters import Splitter

FOREST_FORMAT_VERSION = 1


def resolve_threads(threads: int | None) -> int:
    """Worker count; ``0``/``None`` means all cores (``CAUSALSURV_THREADS`` overrides)."""
    if threads is None:
        threads = int(os.environ.get("CAUSALSURV_THREADS", "0") or 0)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return int(threads)


@dataclass(frozen=True)
class Tree:
    """Read-only view of one tree."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    split_sample: np.ndarray
    leaf_sample: np.ndarray
    leaf_of: np.ndarray  # local leaf node of each leaf_sample entry
    bag_id: int

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def leaves(self) -> dict[int, np.ndarray]:
        out = {int(k): np.empty(0, dtype=np.int64) for k in np.flatnonzero(self.feature < 0)}
        for k in out:
            out[k] = self.leaf_sample[self.leaf_of == k]
        return out


@dataclass(frozen=True)
class ForestWeights:
    """Sparse kernel weights ``alpha_i(x)`` over training indices."""

    index: np.ndarray
    weight: np.ndarray
    n_trees: int

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.index] = self.weight
        return out


def _draw_samples(n, config, b, n_bags_half):
    """``(split, leaf, kernel_seed, counts)`` for tree ``b``.

    ``counts`` holds bootstrap multiplicities of ``split`` (``None`` when
    subsampling); ``leaf`` then repeats each index by its multiplicity.
    """
    g = config.ci_group_size
    rng = np.random.default_rng([config.seed, 1, b])
    size = int(math.ceil(config.sample_fraction * n))
    if config.bootstrap:
        mult = np.bincount(rng.integers(0, n, size=size), minlength=n)
        split = np.flatnonzero(mult).astype(np.int64)
        counts = mult[split].astype(np.float64)
        leaf = np.repeat(split, mult[split])
        kernel_seed = int(rng.integers(0, 2**63 - 1, dtype=np.int64))
        return split, leaf.astype(np.int64), kernel_seed, counts
    if g > 1:
        half = n_bags_half[b // g]
        sub = rng.choice(half, size=min(size, half.size), replace=False)
    else:
        sub = rng.choice(n, size=size, replace=False)
    if config.honesty:
        n_split = int(math.floor(config.honesty_fraction * sub.size))
        n_split = min(max(n_split, 1), sub.size - 1) if sub.size > 1 else sub.size
        split = np.sort(sub[:n_split])
        leaf = np.sort(sub[n_split:])
    else:
        split = np.sort(sub)
        leaf = split
    kernel_seed = int(rng.integers(0, 2**63 - 1, dtype=np.int64))
    return split.astype(np.int64), leaf.astype(np.int64), kernel_seed, None


def _half_samples(n, config):
    g = config.ci_group_size
    if g <= 1:
        return []
    half = int(math.ceil(n / 2))
    return [np.sort(np.random.default_rng([config.seed, 0, k]).choice(n, size=half, replace=False))
            for k in range(config.num_trees // g)]


class Forest:
    """A fitted forest; build with :func:`grow_forest`."""

    def __init__(self, config, X, node_ptr, feature, threshold, left, right,
                 split_ptr, split_samples, leaf_sample_ptr, leaf_samples, backend=None):
        self.config = config
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.n, self.p = self.X.shape
        self.node_ptr = np.asarray(node_ptr, dtype=np.int64)
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.split_ptr = np.asarray(split_ptr, dtype=np.int64)
        self.split_samples = np.asarray(split_samples, dtype=np.int64)
        self.leaf_sample_ptr = np.asarray(leaf_sample_ptr, dtype=np.int64)
        self.leaf_samples = np.asarray(leaf_samples, dtype=np.int64)
        self.bag_ids = np.arange(self.num_trees) // max(config.ci_group_size, 1)
        self._kernels = get_kernels(backend)
        self._inbag = None
        self._index_leaves()

    @property
    def num_trees(self) -> int:
        return self.node_ptr.size - 1

    def _index_leaves(self):
        k = self._kernels
        total = self.feature.size
        node_of = np.empty(self.leaf_samples.size, dtype=np.int64)
        for b in range(self.num_trees):
            s, e = self.node_ptr[b], self.node_ptr[b + 1]
            ls, le = self.leaf_sample_ptr[b], self.leaf_sample_ptr[b + 1]
            local = k.route_tree(self.feature[s:e], self.threshold[s:e], self.left[s:e],
                                 self.right[s:e], self.X, self.leaf_samples[ls:le])
            node_of[ls:le] = local + s
        order = np.argsort(node_of, kind="stable")
        self.leaf_members = np.ascontiguousarray(self.leaf_samples[order])
        self._member_node = node_of[order]
        self.leaf_cnt = np.bincount(node_of, minlength=total).astype(np.int64)
        self.leaf_ptr = np.concatenate([[0], np.cumsum(self.leaf_cnt)]).astype(np.int64)
        self._node_of_leaf_sample = node_of

    def tree(self, b: int) -> Tree:
        s, e = self.node_ptr[b], self.node_ptr[b + 1]
        ls, le = self.leaf_sample_ptr[b], self.leaf_sample_ptr[b + 1]
        return Tree(self.feature[s:e].copy(), self.threshold[s:e].copy(), self.left[s:e].copy(),
                    self.right[s:e].copy(), self.split_samples[self.split_ptr[b]:self.split_ptr[b + 1]].copy(),
                    self.leaf_samples[ls:le].copy(), self._node_of_leaf_sample[ls:le] - s,
                    int(self.bag_ids[b]))

    @property
    def inbag(self) -> np.ndarray:
        """``(B, n)`` uint8 indicator of each tree's subsample (split and leaf parts)."""
        if self._inbag is None:
            ib = np.zeros((self.num_trees, self.n), dtype=np.uint8)
            for b in range(self.num_trees):
                ib[b, self.split_samples[self.split_ptr[b]:self.split_ptr[b + 1]]] = 1
                ib[b, self.leaf_samples[self.leaf_sample_ptr[b]:self.leaf_sample_ptr[b + 1]]] = 1
            self._inbag = ib
        return self._inbag

    def _query(self, Xq):
        Xq = np.asarray(Xq, dtype=np.float64)
        if Xq.ndim == 1:
            Xq = Xq[None, :]
        if Xq.ndim != 2 or Xq.shape[1] != self.p:
            raise ValueError(f"query has {Xq.shape[-1]} features; forest was fit with p={self.p}")
        return np.ascontiguousarray(Xq)

    def _exclude(self, exclude, m):
        if exclude is None:
            return None, None
        ex = np.ascontiguousarray(np.broadcast_to(np.asarray(exclude, dtype=np.int64), (m,)))
        return ex, self.inbag

    def _flat(self):
        return self.node_ptr, self.feature, self.threshold, self.left, self.right

    def route(self, Xq) -> np.ndarray:
        """Global leaf node of each query in each tree, shape ``(m, B)``."""
        return self._kernels.route_forest(*self._flat(), self._query(Xq))

    def leaf_sums(self, values) -> np.ndarray:
        """Per-node sums of ``values`` over honest leaf members."""
        v = np.asarray(values, dtype=np.float64)
        return np.bincount(self._member_node, weights=v[self.leaf_members], minlength=self.feature.size)

    def weights(self, x, exclude: int | None = None) -> ForestWeights:
        """Kernel weights at a single point, averaged over contributing trees."""
        xq = self._query(x)
        leaves = self.route(xq)[0]
        ib = self.inbag if exclude is not None and exclude >= 0 else None
        acc = np.zeros(self.n)
        used = 0
        for b, g in enumerate(leaves):
            if self.leaf_cnt[g] == 0 or (ib is not None and ib[b, exclude]):
                continue
            mem = self.leaf_members[self.leaf_ptr[g]:self.leaf_ptr[g + 1]]
            np.add.at(acc, mem, 1.0 / mem.size)
            used += 1
        if used:
            acc /= used
        idx = np.flatnonzero(acc)
        return ForestWeights(idx, acc[idx], used)

    def predict_ratio(self, num, den, Xq, exclude=None, want_var=False):
        """Weighted ratio estimate ``sum(alpha*num)/sum(alpha*den)``.

        Returns ``(est, den_mean, h_raw, h_se, n_trees)`` as produced by the
        kernel: ``h_raw`` is the little-bags variance of the per-tree residual
        and ``h_se`` its Monte Carlo scale.
        """
        Xq = self._query(Xq)
        ex, ib = self._exclude(exclude, Xq.shape[0])
        return self._kernels.predict_ratio(
            *self._flat(), self.leaf_sums(num), self.leaf_sums(den), self.leaf_cnt,
            Xq, ex, ib, int(self.config.ci_group_size), bool(want_var))

    def predict_mean(self, y, Xq, exclude=None):
        est, _, _, _, used = self.predict_ratio(y, np.ones(self.n), Xq, exclude)
        return est, used

    def km_curves(self, Xq, tidx, event, pre, n_grid, exclude=None):
        """Forest-weighted Kaplan-Meier curves, shape ``(m, n_grid)``."""
        Xq = self._query(Xq)
        ex, ib = self._exclude(exclude, Xq.shape[0])
        return self._kernels.weighted_km(
            *self._flat(), self.leaf_ptr, self.leaf_members, self.leaf_cnt, Xq, ex, ib,
            np.ascontiguousarray(tidx, dtype=np.int64), np.ascontiguousarray(event, dtype=np.float64),
            np.ascontiguousarray(pre, dtype=np.float64), int(n_grid))

    def to_dict(self) -> dict:
        return {
            "format": "causalsurv.forest",
            "version": FOREST_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "X": self.X.tolist(),
            "node_ptr": self.node_ptr.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "split_ptr": self.split_ptr.tolist(),
            "split_samples": self.split_samples.tolist(),
            "leaf_sample_ptr": self.leaf_sample_ptr.tolist(),
            "leaf_samples": self.leaf_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, backend=None) -> "Forest":
        if d.get("format") != "causalsurv.forest" or d.get("version") != FOREST_FORMAT_VERSION:
            raise ValueError("unsupported forest document")
        X = np.asarray(d["X"], dtype=np.float64).reshape(len(d["X"]), -1)
        return cls(ForestConfig.from_dict(d["config"]), X, d["node_ptr"], d["feature"], d["threshold"],
                   d["left"], d["right"], d["split_ptr"], d["split_samples"],
                   d["leaf_sample_ptr"], d["leaf_samples"], backend=backend)


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature sample order by ``(value, index)``, shape ``(p, n)``."""
    return np.ascontiguousarray(
        np.stack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]).astype(np.int64)
        if X.shape[1] else np.empty((0, X.shape[0]), dtype=np.int64))


def grow_forest(X, splitter: Splitter, config: ForestConfig, threads: int | None = None,
                backend: str | None = None) -> Forest:
    """Grow an honest forest on features ``X`` with split objective ``splitter``.

    Tree ``b`` draws its subsample from the half-sample of little bag
    ``b // ci_group_size`` using a stream seeded by ``(seed, b)``, so results
    do not depend on ``threads``.
    """
    X = np.ascontiguousarray(getattr(X, "x", X), dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    n, p = X.shape
    config.validate(p)
    if splitter.n != n:
        raise ValueError(f"splitter has {splitter.n} samples, X has {n}")
    if n < 2 * config.min_node_size:
        raise FitError(f"need at least {2 * config.min_node_size} samples, got {n}")
    if p == 0:
        raise ValueError("X has no features")
    kern = get_kernels(backend)
    order = presort(X)
    halves = _half_samples(n, config)
    mtry = config.resolved_mtry(p)
    args = splitter.kernel_args()
    mode, y, a, b, w, tidx, event, pre, n_grid = args

    def grow(t):
        split, leaf, kseed, counts = _draw_samples(n, config, t, halves)
        wt = w
        if counts is not None:
            wt = w.copy()
            wt[split] *= counts
        f, thr, lft, rgt = kern.grow_tree(X, order, split, mode, y, a, b, wt, tidx, event, pre,
                                          n_grid, config.min_node_size, mtry,
                                          float(config.child_balance), kseed)
        return f, thr, lft, rgt, split, leaf

    n_threads = resolve_threads(threads)
    if n_threads == 1 or config.num_trees == 1:
        trees = [grow(t) for t in range(config.num_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            trees = list(ex.map(grow, range(config.num_trees)))

    node_ptr = np.concatenate([[0], np.cumsum([t[0].size for t in trees])])
    split_ptr = np.concatenate([[0], np.cumsum([t[4].size for t in trees])])
    leaf_ptr = np.concatenate([[0], np.cumsum([t[5].size for t in trees])])
    return Forest(
        config, X, node_ptr,
        np.concatenate([t[0] for t in trees]), np.concatenate([t[1] for t in trees]),
        np.concatenate([t[2] for t in trees]), np.concatenate([t[3] for t in trees]),
        split_ptr, np.concatenate([t[4] for t in trees]),
        leaf_ptr, np.concatenate([t[5] for t in trees]), backend=backend)


def forest_weights(forest: Forest, x) -> ForestWeights:
    """Kernel weights ``alpha_i(x)``; trees with an empty leaf at ``x`` are skipped."""
    return forest.weights(x)


def oob_predict(forest: Forest, i: int) -> ForestWeights:
    """Kernel weights at training point ``i`` using only trees that never saw ``i``."""
    fw = forest.weights(forest.X[i], exclude=int(i))
    if fw.n_trees == 0:
        raise NoOOBError(f"no tree excludes sample {i}")
    return fw
