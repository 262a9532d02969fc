"""Shrinkage predictors for square-root transformed Poisson small-area data
with functional measurement error in the covariates."""

from .model import (
    AreaObservation,
    ModelParameters,
    PredictorKind,
    PredictorReport,
    Provenance,
    ShrinkageProfile,
    SimulationSummary,
    derive_profile,
    shrinkage_profile,
)
from .predictors import (
    b_substitute_predict,
    bayes_predict,
    bias,
    correction_constant,
    direct_predict,
    mle_xbeta,
    mspe_oracle_terms,
    mspe_theoretical,
    negative_probability,
    optimal_predict,
    optimal_weight,
    predict_with_weight,
    proposed_predict,
    truncate_nonneg,
    weight_gap_bound,
)

__version__ = "0.1.0"
