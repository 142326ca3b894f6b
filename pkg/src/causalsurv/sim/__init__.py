"""Synthetic designs, exact truths, baselines and benchmark runners."""
from .dgp import DISCRETE, T_MAX, DgpSpec, LatentRecord, generate, propensity, simulate
from .oracles import (MonteCarloValue, OracleNuisances, average_effect, oracle_tau,
                      overlap_weighted_effect, restricted_mean_exact, true_tau)

__all__ = ["DISCRETE", "T_MAX", "DgpSpec", "LatentRecord", "generate", "propensity", "simulate",
           "MonteCarloValue", "OracleNuisances", "average_effect", "oracle_tau",
           "overlap_weighted_effect", "restricted_mean_exact", "true_tau"]
