"""Fitting a sum of shifted ReLUs to GELU/SiLU and evaluating it."""
from .anneal import FitError, SAConfig, fit
from .coeffile import CoefficientFileError
from .functions import (
    PUBLISHED,
    ActivationKind,
    CombinationParams,
    ObjectiveMode,
    TailInterval,
    activation,
    activation_grad,
    combo_deriv,
    combo_eval,
    constraint_residual,
    published_params,
    reference_deriv,
    reference_eval,
    segment_codes,
    tail_interval,
)
from .objective import FastObjective, QuadratureError, adaptive_simpson, objective, simpson_reference

__all__ = [
    "ActivationKind", "CoefficientFileError", "CombinationParams", "FastObjective", "FitError",
    "ObjectiveMode", "PUBLISHED", "QuadratureError", "SAConfig", "TailInterval", "activation",
    "activation_grad", "adaptive_simpson", "combo_deriv", "combo_eval", "constraint_residual",
    "fit", "objective", "published_params", "reference_deriv", "reference_eval",
    "segment_codes", "simpson_reference", "tail_interval",
]
