"""Overlapping communities in directed multilayer networks with a categorical node attribute."""

from .data import (
    DataError,
    DesignMatrix,
    HoldoutMask,
    MultilayerGraph,
    bin_numeric,
    load_attributes,
    load_edgelist,
    load_mask,
    save_mask,
    validate,
)
from .em import (
    EMConfig,
    FitError,
    FitResult,
    ModelParams,
    RescaleCoefficients,
    attribute_probs,
    fit,
    log_likelihood,
    poisson_mean,
    predict_attributes,
    predict_scores,
)
from .synth import generate, preset
from .metrics import auc, accuracy, matched_similarity, recovery_report, soft_scores
from .cv import GridSpec, biased_holdout, grid_search, kfold_masks, select_joint, uniform_holdout

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DesignMatrix",
    "HoldoutMask",
    "MultilayerGraph",
    "bin_numeric",
    "load_attributes",
    "load_edgelist",
    "load_mask",
    "save_mask",
    "validate",
    "EMConfig",
    "FitError",
    "FitResult",
    "ModelParams",
    "RescaleCoefficients",
    "attribute_probs",
    "fit",
    "log_likelihood",
    "poisson_mean",
    "predict_attributes",
    "predict_scores",
    "generate",
    "preset",
    "auc",
    "accuracy",
    "matched_similarity",
    "recovery_report",
    "soft_scores",
    "GridSpec",
    "biased_holdout",
    "grid_search",
    "kfold_masks",
    "select_joint",
    "uniform_holdout",
]
