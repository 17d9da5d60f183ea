"""Gradient-boosted risk scores with exact TreeSHAP explanations for imbalanced binary cohorts."""

from .data import Cohort, SimConfig, SplitSpec, load_cohort, simulate_cohort, stratified_split, write_cohort
from .errors import InputError, RiskboostError
from .gbdt import BoostedModel, TrainConfig, fit, load_model, predict_margin, predict_proba, save_model

__version__ = "0.1.0"

__all__ = [
    "BoostedModel", "Cohort", "InputError", "RiskboostError", "SimConfig", "SplitSpec", "TrainConfig",
    "fit", "load_cohort", "load_model", "predict_margin", "predict_proba", "save_model",
    "simulate_cohort", "stratified_split", "write_cohort",
]
