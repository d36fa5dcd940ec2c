"""Desk-scale GNN benchmarking: autodiff core, graph ops, models, training."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    Diverged,
    NumericError,
    ParseError,
    ValidationError,
    VocabularyError,
)
from .tensor import Tape, Tensor, apply_op, as_tensor, no_grad, parameter

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "Diverged",
    "NumericError",
    "ParseError",
    "ValidationError",
    "VocabularyError",
    "Tape",
    "Tensor",
    "apply_op",
    "as_tensor",
    "no_grad",
    "parameter",
]
