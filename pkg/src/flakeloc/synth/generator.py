"""
Synthetic localisation datasets with planted culprits.

Every commit has exactly one culprit class. Flaky tests cover it with
probability ``baseline + bias`` and stable tests with probability
``baseline``; every other cell is covered with probability ``baseline``.
Optionally the culprit's ``changes`` and/or ``loc`` metrics are raised
towards (and at full strength past) the commit maximum.
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field, model_validator

from ..errors import InputValidationError
from ..localisation.coverage import CoverageMatrix, Outcome
from ..localisation.dataset import Category, GroundTruthEntry, LocalisationProblem, write_dataset
from ..metrics.tables import MetricFamily, MetricTable

logger = structlog.get_logger(__name__)


class SignalMetric(Enum):
    """Metric columns that carry the culprit signal."""

    CHANGES = "changes"
    LOC = "loc"
    BOTH = "both"


class SynthSpec(BaseModel):
    """Generator parameters."""

    commits: int = Field(default=50, ge=1)
    tests: int = Field(default=100, ge=2)
    classes: int = Field(default=200, ge=1)
    flaky_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    bias: float = Field(default=0.8, ge=0.0, le=1.0)
    baseline: float = Field(default=0.2, ge=0.0, le=1.0)
    signal: float = Field(default=0.0, ge=0.0, le=1.0)
    signal_fraction: float = Field(default=1.0, ge=0.0, le=1.0)
    signal_metric: SignalMetric = SignalMetric.BOTH
    seed: int = 0
    project: str = "synthetic"

    @model_validator(mode="after")
    def _feasible(self) -> "SynthSpec":
        if self.baseline + self.bias > 1.0 + 1e-12:
            raise ValueError(
                f"infeasible spec: baseline {self.baseline} + bias {self.bias} exceeds probability 1"
            )
        return self

    @property
    def flaky_tests(self) -> int:
        """At least one flaky and one stable test per commit."""
        return min(self.tests - 1, max(1, round(self.tests * self.flaky_fraction)))

    @property
    def signal_commits(self) -> int:
        return round(self.signal_fraction * self.commits)


def _raise_towards_max(column: np.ndarray, index: int, strength: float) -> None:
    if strength <= 0:
        return
    target = column.max() + 1.0
    column[index] = np.round(column[index] + strength * (target - column[index]))


def _commit(spec: SynthSpec, index: int, rng: np.random.Generator) -> LocalisationProblem:
    commit_id = f"c{index:04d}"
    class_ids = [f"synth.pkg{j % 10}.Class{j:04d}" for j in range(spec.classes)]
    test_ids = [f"synth.tests.Test{t:04d}" for t in range(spec.tests)]

    culprit = int(rng.integers(spec.classes))
    flaky_rows = np.zeros(spec.tests, dtype=bool)
    flaky_rows[rng.choice(spec.tests, size=spec.flaky_tests, replace=False)] = True

    activity = rng.random((spec.tests, spec.classes)) < spec.baseline
    culprit_draw = rng.random(spec.tests)
    activity[:, culprit] = np.where(
        flaky_rows,
        culprit_draw < spec.baseline + spec.bias,
        culprit_draw < spec.baseline,
    )
    matrix = CoverageMatrix(
        test_ids=test_ids,
        class_ids=class_ids,
        activity=activity,
        outcome=[Outcome.FLAKY if f else Outcome.STABLE for f in flaky_rows],
    )

    changes = rng.poisson(3.0, spec.classes).astype(float)
    age = np.round(rng.exponential(120.0, spec.classes), 3)
    developers = 1.0 + rng.poisson(1.0, spec.classes)
    loc = np.round(rng.lognormal(4.0, 0.6, spec.classes))
    cc = 1.0 + rng.poisson(loc / 10.0)
    doi = 1.0 + rng.poisson(0.5, spec.classes)
    flakiness = rng.poisson(0.3, (spec.classes, 7)).astype(float)

    if index < spec.signal_commits:
        if spec.signal_metric in (SignalMetric.CHANGES, SignalMetric.BOTH):
            _raise_towards_max(changes, culprit, spec.signal)
        if spec.signal_metric in (SignalMetric.LOC, SignalMetric.BOTH):
            _raise_towards_max(loc, culprit, spec.signal)

    metrics: Dict[MetricFamily, MetricTable] = {
        MetricFamily.CHANGE: MetricTable(
            family=MetricFamily.CHANGE,
            values={c: (changes[j], age[j], developers[j]) for j, c in enumerate(class_ids)},
        ),
        MetricFamily.SIZE: MetricTable(
            family=MetricFamily.SIZE,
            values={c: (loc[j], cc[j], doi[j]) for j, c in enumerate(class_ids)},
        ),
        MetricFamily.FLAKINESS: MetricTable(
            family=MetricFamily.FLAKINESS,
            values={c: tuple(flakiness[j]) for j, c in enumerate(class_ids)},
        ),
    }
    truth = GroundTruthEntry(
        commit_id=commit_id,
        project=spec.project,
        flaky_tests=tuple(t for t, f in zip(test_ids, flaky_rows) if f),
        flaky_classes=(class_ids[culprit],),
        categories=(list(Category)[int(rng.integers(len(Category)))],),
    )
    return LocalisationProblem(
        commit_id=commit_id,
        matrix=matrix,
        metrics=metrics,
        truth=truth,
        project=spec.project,
    )


def generate(spec: SynthSpec) -> List[LocalisationProblem]:
    """Deterministic dataset for ``spec``; one derived seed per commit."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.commits)
    problems = [_commit(spec, i, np.random.default_rng(child)) for i, child in enumerate(children)]
    logger.info(
        "synthetic_dataset_generated",
        commits=spec.commits,
        tests=spec.tests,
        classes=spec.classes,
        seed=spec.seed,
    )
    return problems


def write_synthetic(spec: SynthSpec, directory: Union[str, Path]) -> List[LocalisationProblem]:
    """Generate and write a dataset directory."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()):
        raise InputValidationError("output directory is not empty", str(directory))
    problems = generate(spec)
    write_dataset(problems, directory)
    return problems
