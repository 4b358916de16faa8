"""
Feature frames for learned scoring models.

A frame holds, for every candidate class of one commit, the four SBFL scores
plus the metric columns of the selected family. Every column is min-max
normalised over the classes of that commit.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional

import numpy as np
import structlog

from ..errors import InputValidationError
from ..localisation.coverage import CoverageMatrix
from ..localisation.sbfl import Formula, FormulaId, suspiciousness
from .tables import FAMILY_COLUMNS, MetricFamily, MetricTable, table_for_classes

logger = structlog.get_logger(__name__)

SBFL_TERMINALS = tuple(f.value for f in Formula)


class FeatureSet(Enum):
    """Terminal sets a model may be evolved over."""

    SBFL = "sbfl"
    SBFL_FLAKINESS = "sbfl+flakiness"
    SBFL_CHANGE = "sbfl+change"
    SBFL_SIZE = "sbfl+size"

    @property
    def family(self) -> Optional[MetricFamily]:
        return _FAMILY_OF[self]


_FAMILY_OF: Dict[FeatureSet, Optional[MetricFamily]] = {
    FeatureSet.SBFL: None,
    FeatureSet.SBFL_FLAKINESS: MetricFamily.FLAKINESS,
    FeatureSet.SBFL_CHANGE: MetricFamily.CHANGE,
    FeatureSet.SBFL_SIZE: MetricFamily.SIZE,
}


def feature_names(feature_set: FeatureSet) -> tuple:
    """Ordered terminal names of ``feature_set``."""
    feature_set = FeatureSet(feature_set)
    family = feature_set.family
    return SBFL_TERMINALS + (FAMILY_COLUMNS[family] if family is not None else ())


@dataclass(frozen=True)
class FeatureFrame:
    """Per-class feature vectors of one commit, in matrix column order."""

    class_ids: tuple
    columns: Dict[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        columns: Dict[str, np.ndarray] = {}
        for name, values in self.columns.items():
            array = np.array(values, dtype=float)
            if array.shape != (len(self.class_ids),):
                raise InputValidationError(
                    f"feature {name} has {array.size} values for {len(self.class_ids)} classes"
                )
            array.setflags(write=False)
            columns[name] = array
        object.__setattr__(self, "columns", columns)

    @property
    def names(self) -> List[str]:
        return list(self.columns.keys())

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise InputValidationError(f"unknown feature {name!r}") from None

    def matrix(self, names: Optional[tuple] = None) -> np.ndarray:
        """Classes x features array for ``names`` (all columns by default)."""
        names = tuple(names) if names is not None else tuple(self.columns)
        if not names:
            return np.zeros((len(self.class_ids), 0))
        return np.column_stack([self.column(n) for n in names])

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "class_ids": list(self.class_ids),
            "columns": {name: values.tolist() for name, values in self.columns.items()},
        }


def normalize_column(values: np.ndarray) -> np.ndarray:
    """Min-max scale one column to [0, 1]; a constant column becomes 0.

    +inf is replaced by the largest finite value (1.0 if there is none) and
    -inf by the smallest before scaling.
    """
    values = np.array(values, dtype=float)
    if values.size == 0:
        return values
    if np.isnan(values).any():
        raise InputValidationError("cannot normalise NaN feature values")

    finite = values[np.isfinite(values)]
    high = float(finite.max()) if finite.size else 1.0
    low = float(finite.min()) if finite.size else 0.0
    values[values == np.inf] = high
    values[values == -np.inf] = low

    span = values.max() - values.min()
    if span == 0:
        return np.zeros_like(values)
    return (values - values.min()) / span


def normalize(frame: FeatureFrame) -> FeatureFrame:
    """Normalise every column of ``frame`` over its classes."""
    return FeatureFrame(
        class_ids=frame.class_ids,
        columns={name: normalize_column(values) for name, values in frame.columns.items()},
    )


def frame_from_tables(
    matrix: CoverageMatrix,
    metrics: Mapping[MetricFamily, MetricTable],
    feature_set: FeatureSet,
    dstar_exponent: float = 2.0,
) -> FeatureFrame:
    """Unnormalised SBFL scores plus the family columns of ``feature_set``."""
    feature_set = FeatureSet(feature_set)
    columns: Dict[str, np.ndarray] = {}
    for name in SBFL_TERMINALS:
        scores = suspiciousness(matrix, FormulaId(name=Formula(name), dstar_exponent=dstar_exponent))
        columns[name] = np.array([scores[c] for c in matrix.class_ids], dtype=float)

    family = feature_set.family
    if family is not None:
        table = metrics.get(family)
        if table is None:
            raise InputValidationError(f"feature set {feature_set.value} needs the {family.value} metrics table")
        rows = table_for_classes(table, matrix.class_ids)
        for index, name in enumerate(table.columns):
            columns[name] = np.array([rows[c][index] for c in matrix.class_ids], dtype=float)

    return FeatureFrame(class_ids=matrix.class_ids, columns=columns)


def build_features(problem, feature_set: FeatureSet, dstar_exponent: float = 2.0) -> FeatureFrame:
    """Normalised feature frame of one localisation problem."""
    frame = frame_from_tables(problem.matrix, problem.metrics, feature_set, dstar_exponent)
    logger.debug(
        "features_built",
        commit_id=getattr(problem, "commit_id", None),
        feature_set=FeatureSet(feature_set).value,
        classes=len(frame.class_ids),
    )
    return normalize(frame)
