"""
Scoring expressions over feature terminals.

Expressions are DEAP primitive trees built from six arithmetic operators,
the terminals of a feature set, and ephemeral constants in [0, 1). They are
stored as prefix text such as ``add(mul(ochiai,changes),sqrt(loc))``.
"""

import random
import re
from functools import lru_cache
from typing import Callable, Dict, Set, Union

import numpy as np
from deap import gp

from ..errors import InputValidationError
from ..metrics.features import FeatureFrame, FeatureSet, feature_names

PROTECTED_EPSILON = 1e-9
EPHEMERAL_NAME = "rand01"
OPERATOR_NAMES = ("add", "sub", "mul", "div", "sqrt", "neg")

_NUMBER = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")

ExpressionLike = Union[str, gp.PrimitiveTree]


def protected_div(a, b):
    """a / b, or 1 where |b| is within 1e-9 of zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    small = np.abs(b) <= PROTECTED_EPSILON
    with np.errstate(all="ignore"):
        result = np.where(small, 1.0, a / np.where(small, 1.0, b))
    return result


def protected_sqrt(x):
    """Square root of |x|."""
    return np.sqrt(np.abs(np.asarray(x, dtype=float)))


def _random_constant() -> float:
    return random.random()


@lru_cache(maxsize=None)
def primitive_set(feature_set: FeatureSet) -> gp.PrimitiveSet:
    """The operator and terminal set for ``feature_set``."""
    feature_set = FeatureSet(feature_set)
    names = feature_names(feature_set)
    pset = gp.PrimitiveSet(feature_set.name, arity=len(names))
    pset.addPrimitive(np.add, 2, name="add")
    pset.addPrimitive(np.subtract, 2, name="sub")
    pset.addPrimitive(np.multiply, 2, name="mul")
    pset.addPrimitive(protected_div, 2, name="div")
    pset.addPrimitive(protected_sqrt, 1, name="sqrt")
    pset.addPrimitive(np.negative, 1, name="neg")
    pset.addEphemeralConstant(EPHEMERAL_NAME, _random_constant)
    pset.renameArguments(**{f"ARG{i}": name for i, name in enumerate(names)})
    return pset


def format_expression(tree: gp.PrimitiveTree) -> str:
    """Prefix text of a tree without whitespace."""
    return str(tree).replace(" ", "")


def parse_expression(text: str, feature_set: FeatureSet) -> gp.PrimitiveTree:
    """Parse prefix text against the terminals of ``feature_set``."""
    pset = primitive_set(FeatureSet(feature_set))
    tokens = [t for t in re.split(r"[\s(),]", text) if t]
    if not tokens:
        raise InputValidationError("empty expression")
    for token in tokens:
        known = token in pset.mapping and token != EPHEMERAL_NAME
        if not known and not _NUMBER.match(token):
            raise InputValidationError(
                f"unknown terminal {token!r} for feature set {FeatureSet(feature_set).value}"
            )
    try:
        tree = gp.PrimitiveTree.from_string(text, pset)
    except (TypeError, IndexError, SyntaxError, ValueError) as e:
        raise InputValidationError(f"malformed expression {text!r}: {e}") from None
    if not _arity_consistent(tree):
        raise InputValidationError(f"malformed expression {text!r}")
    return tree


def _arity_consistent(tree: gp.PrimitiveTree) -> bool:
    pending = 1
    for node in tree:
        if pending == 0:
            return False
        pending += node.arity - 1
    return pending == 0


def expression_terminals(tree: gp.PrimitiveTree) -> Set[str]:
    """Feature terminals used by ``tree``; constants are not included."""
    return {node.value for node in tree if isinstance(node, gp.Terminal) and isinstance(node.value, str)}


def compile_expression(tree: ExpressionLike, feature_set: FeatureSet) -> Callable[..., np.ndarray]:
    """A callable taking one array per feature terminal, in feature order."""
    feature_set = FeatureSet(feature_set)
    if isinstance(tree, str):
        tree = parse_expression(tree, feature_set)
    if not _arity_consistent(tree):
        raise InputValidationError(f"malformed expression {format_expression(tree)!r}")
    return gp.compile(tree, primitive_set(feature_set))


def evaluate_compiled(func: Callable[..., np.ndarray], features: np.ndarray) -> np.ndarray:
    """Apply a compiled expression to a rows x terminals array.

    NaN results become 0; infinities are kept.
    """
    features = np.asarray(features, dtype=float)
    with np.errstate(all="ignore"):
        raw = func(*features.T)
    values = np.broadcast_to(np.asarray(raw, dtype=float), (features.shape[0],)).copy()
    values[np.isnan(values)] = 0.0
    return values


def evaluate_expression(
    tree: ExpressionLike,
    frame: FeatureFrame,
    feature_set: FeatureSet,
) -> Dict[str, float]:
    """Score every class of ``frame`` with ``tree``."""
    feature_set = FeatureSet(feature_set)
    names = feature_names(feature_set)
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise InputValidationError(f"feature frame lacks terminal {missing[0]!r}")
    func = compile_expression(tree, feature_set)
    values = evaluate_compiled(func, frame.matrix(names))
    return {class_id: float(v) for class_id, v in zip(frame.class_ids, values)}
