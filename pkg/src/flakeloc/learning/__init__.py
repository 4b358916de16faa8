"""
flakeloc Learning Module

Genetic programming of scoring formulae over SBFL scores and class metrics,
with cross-validation, repeated seeds and median-model selection.
"""

from .expression import evaluate_expression, format_expression, parse_expression, primitive_set
from .evolve import (
    EvolvedModel,
    FoldResult,
    GPConfig,
    TrainingExample,
    cross_validate,
    evolve,
    fitness,
    prepare_examples,
    select_median,
    terminal_frequency,
)
from .bundle import read_bundle, read_bundles, write_bundle

__all__ = [
    "evaluate_expression",
    "format_expression",
    "parse_expression",
    "primitive_set",
    "EvolvedModel",
    "FoldResult",
    "GPConfig",
    "TrainingExample",
    "cross_validate",
    "evolve",
    "fitness",
    "prepare_examples",
    "select_median",
    "terminal_frequency",
    "read_bundle",
    "read_bundles",
    "write_bundle",
]
