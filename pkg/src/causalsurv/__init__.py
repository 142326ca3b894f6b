"""Causal survival forests: doubly robust CATE estimation for right-censored outcomes."""
__version__ = "0.1.0"

from .blp import BlpResult, best_linear_projection, compute_gamma, naive_projection
from .csf import (CatePrediction, CsfModel, estimate_variance, fit_csf, fit_ipcw_cf, predict_tau,
                  predict_with_ci)
from .data import (DiagnosticsReport, SurvivalDataset, SurvivalSample, TimeGrid, build_time_grid,
                   diagnose, load_csv, save_csv, truncate_and_recode)
from .errors import (CausalSurvError, CIUnavailableError, DegenerateGridError, FitError, NoOOBError,
                     NotIdentifiedError, ParseError, SchemaError, ScoringError, SingularDesignError)
from .forest import CSF_DEFAULTS, NUISANCE_DEFAULTS, ForestConfig
from .io import load_model, save_model
from .nuisance import NuisanceSet, assemble_nuisances
from .scoring import ScoreParts, compute_score_parts, robinson_score, solve_constant_tau

__all__ = [
    "__version__", "BlpResult", "best_linear_projection", "compute_gamma", "naive_projection",
    "CatePrediction", "CsfModel", "estimate_variance", "fit_csf", "fit_ipcw_cf", "predict_tau",
    "predict_with_ci", "DiagnosticsReport", "SurvivalDataset", "SurvivalSample", "TimeGrid",
    "build_time_grid", "diagnose", "load_csv", "save_csv", "truncate_and_recode", "CausalSurvError",
    "CIUnavailableError", "DegenerateGridError", "FitError", "NoOOBError", "NotIdentifiedError",
    "ParseError", "SchemaError", "ScoringError", "SingularDesignError", "CSF_DEFAULTS",
    "NUISANCE_DEFAULTS", "ForestConfig", "load_model", "save_model", "NuisanceSet",
    "assemble_nuisances", "ScoreParts", "compute_score_parts", "robinson_score", "solve_constant_tau",
]
