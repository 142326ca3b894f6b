from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class ForestConfig:
    """Tuning parameters for an honest, subsampled forest.

    Parameters
    ----------
    num_trees : int
        Number of trees ``B``.
    mtry : int or None
        Candidate split variables per node. ``None`` resolves to
        ``min(p, ceil(sqrt(p)) + 20)``.
    min_node_size : int
        Minimum number of split-sample points in each child.
    sample_fraction : float
        Fraction of the ``n`` samples drawn (without replacement) per tree.
        Must be at most 0.5 when trees are grouped in little bags.
    honesty : bool
        Split each subsample into a split-selection half and a leaf half.
    honesty_fraction : float
        Share of the subsample used for split selection.
    child_balance : float
        Each child keeps at least this fraction of its parent (``nu``).
    ci_group_size : int
        Trees per little bag; ``>= 2`` enables variance estimates.
    seed : int
        Root seed; tree ``b`` derives its own stream from ``(seed, b)``.
    bootstrap : bool
        Draw ``ceil(sample_fraction * n)`` indices with replacement instead
        of subsampling; duplicates act as integer weights. Requires
        ``honesty=False`` and ``ci_group_size=1``.
    """

    num_trees: int = 2000
    mtry: int | None = None
    min_node_size: int = 5
    sample_fraction: float = 0.5
    honesty: bool = True
    honesty_fraction: float = 0.5
    child_balance: float = 0.05
    ci_group_size: int = 2
    seed: int = 42
    bootstrap: bool = False

    def resolved_mtry(self, p: int) -> int:
        if self.mtry is None:
            return min(p, math.ceil(math.sqrt(p)) + 20)
        return min(int(self.mtry), p)

    def validate(self, p: int | None = None) -> "ForestConfig":
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if not 0.0 < self.child_balance < 0.5:
            raise ValueError("child_balance must lie in (0, 0.5)")
        if self.ci_group_size < 1:
            raise ValueError("ci_group_size must be >= 1")
        if self.num_trees % self.ci_group_size:
            raise ValueError("num_trees must be divisible by ci_group_size")
        if self.bootstrap and (self.honesty or self.ci_group_size != 1):
            raise ValueError("bootstrap sampling requires honesty=False and ci_group_size=1")
        upper = 0.5 if self.ci_group_size > 1 else 1.0
        if not 0.0 < self.sample_fraction <= upper:
            raise ValueError(f"sample_fraction must lie in (0, {upper}] for ci_group_size={self.ci_group_size}")
        if self.honesty and not 0.0 < self.honesty_fraction < 1.0:
            raise ValueError("honesty_fraction must lie in (0, 1)")
        if self.mtry is not None:
            if self.mtry < 1 or (p is not None and self.mtry > p):
                raise ValueError(f"mtry must lie in [1, p]; got {self.mtry} with p={p}")
        return self

    def with_(self, **kw) -> "ForestConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**d)


#: grf-style defaults for the nuisance forests (propensity, survival curves).
NUISANCE_DEFAULTS = ForestConfig(num_trees=500, min_node_size=15, ci_group_size=1)
#: defaults for the causal (CATE) forest.
CSF_DEFAULTS = ForestConfig(num_trees=2000, min_node_size=5, ci_group_size=2)
