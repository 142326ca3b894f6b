"""Honest subsampled forest engine with pluggable split objectives."""
from ._backend import BACKEND, get_kernels
from .config import CSF_DEFAULTS, NUISANCE_DEFAULTS, ForestConfig
from .forest import Forest, ForestWeights, Tree, forest_weights, grow_forest, oob_predict, resolve_threads
from .splitters import (CausalSplitter, RegressionSplitter, SplitDecision, Splitter,
                        SurvivalSplitter, best_split)

__all__ = [
    "BACKEND", "get_kernels", "ForestConfig", "CSF_DEFAULTS", "NUISANCE_DEFAULTS",
    "Forest", "ForestWeights", "Tree", "forest_weights", "grow_forest", "oob_predict",
    "resolve_threads", "Splitter", "RegressionSplitter", "CausalSplitter", "SurvivalSplitter",
    "SplitDecision", "best_split",
]
