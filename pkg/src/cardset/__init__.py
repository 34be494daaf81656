"""Cardinality-aware set prediction: surrogate losses, set predictors,
selector training and numerical checks of the consistency bounds."""

from .core import InvalidInputError, log_sum_exp, rank_desc, softmax
from .cost import CostTensor, build_cost, target_loss
from .losses import CompSumKind, ConstrainedKind, all_kinds, parse_kind
from .sets import PredictionSet, ThresholdFamily, TopKFamily, conformal_set, conformal_threshold, topk_set

__version__ = "0.1.0"

__all__ = [
    "CompSumKind", "ConstrainedKind", "CostTensor", "InvalidInputError", "PredictionSet",
    "ThresholdFamily", "TopKFamily", "all_kinds", "build_cost", "conformal_set",
    "conformal_threshold", "log_sum_exp", "parse_kind", "rank_desc", "softmax", "target_loss",
    "topk_set",
]
