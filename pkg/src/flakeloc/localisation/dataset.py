"""
Localisation datasets: one problem per commit plus a ground-truth manifest.

Layout::

    <dataset>/truth.jsonl
    <dataset>/commits/<commit_id>/coverage.csv
    <dataset>/commits/<commit_id>/{change,size,flakiness}.csv   (optional)
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Union

import structlog

from ..errors import InputValidationError
from ..metrics.tables import MetricFamily, MetricTable, ingest_metric_table, write_metric_table
from .coverage import CoverageMatrix, parse_coverage, write_coverage

logger = structlog.get_logger(__name__)

TRUTH_FILE = "truth.jsonl"
COMMITS_DIR = "commits"
COVERAGE_FILE = "coverage.csv"
DEFAULT_PROJECT = "default"


class Category(Enum):
    """Root-cause categories of flakiness."""

    CONCURRENCY = "concurrency"
    ASYNC_WAIT = "async-wait"
    TIME = "time"
    NETWORK = "network"
    UNORDERED_COLLECTIONS = "unordered-collections"
    IO = "io"
    RANDOM = "random"
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class GroundTruthEntry:
    """Known flaky tests, flaky classes and categories of one commit."""

    commit_id: str
    flaky_classes: tuple
    flaky_tests: tuple = ()
    categories: tuple = ()
    project: str = DEFAULT_PROJECT

    def __post_init__(self):
        if not self.commit_id:
            raise InputValidationError("ground truth entry needs a commit_id")
        object.__setattr__(self, "flaky_classes", tuple(self.flaky_classes))
        object.__setattr__(self, "flaky_tests", tuple(self.flaky_tests))
        if not self.flaky_classes:
            raise InputValidationError(f"commit {self.commit_id}: at least one flaky class is required")
        try:
            categories = tuple(Category(c) for c in self.categories)
        except ValueError as e:
            raise InputValidationError(f"commit {self.commit_id}: {e}") from None
        object.__setattr__(self, "categories", categories)

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "commit_id": self.commit_id,
            "project": self.project,
            "flaky_tests": list(self.flaky_tests),
            "flaky_classes": list(self.flaky_classes),
            "categories": [c.value for c in self.categories],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "GroundTruthEntry":
        """Create from dictionary."""
        if "commit_id" not in data or "flaky_classes" not in data:
            raise InputValidationError("ground truth entry needs commit_id and flaky_classes")
        return cls(
            commit_id=str(data["commit_id"]),
            project=str(data.get("project") or DEFAULT_PROJECT),
            flaky_tests=tuple(str(t) for t in data.get("flaky_tests") or ()),
            flaky_classes=tuple(str(c) for c in data["flaky_classes"]),
            categories=tuple(data.get("categories") or ()),
        )


def load_truth(source: Union[str, Path, Iterable[str]]) -> List[GroundTruthEntry]:
    """Read a JSON-lines ground-truth manifest, keeping file order."""
    name = "<truth>"
    if isinstance(source, (str, Path)):
        name = str(source)
        try:
            lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise InputValidationError(f"cannot read ground truth: {e}", name) from e
    else:
        lines = source

    entries: List[GroundTruthEntry] = []
    seen: Set[str] = set()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{name}:{line_no}"
        try:
            entry = GroundTruthEntry.from_dict(json.loads(line))
        except json.JSONDecodeError as e:
            raise InputValidationError(f"invalid JSON: {e.msg}", where) from None
        except (InputValidationError, TypeError, AttributeError) as e:
            raise InputValidationError(str(e), where) from None
        if entry.commit_id in seen:
            raise InputValidationError(f"duplicate commit_id {entry.commit_id!r}", where)
        seen.add(entry.commit_id)
        entries.append(entry)
    return entries


def write_truth(entries: Iterable[GroundTruthEntry], path: Union[str, Path]) -> None:
    """Write a JSON-lines ground-truth manifest."""
    lines = [json.dumps(e.to_dict(), sort_keys=True) for e in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class LocalisationProblem:
    """Coverage, metric tables and (when known) the ground truth of one commit."""

    commit_id: str
    matrix: CoverageMatrix
    metrics: Dict[MetricFamily, MetricTable] = field(default_factory=dict)
    truth: Optional[GroundTruthEntry] = None
    project: str = DEFAULT_PROJECT

    def __post_init__(self):
        if self.truth is None:
            return
        classes = set(self.matrix.class_ids)
        missing = [c for c in self.truth.flaky_classes if c not in classes]
        if missing:
            raise InputValidationError(
                f"commit {self.commit_id}: flaky class {missing[0]!r} is not in the coverage matrix"
            )
        tests = set(self.matrix.test_ids)
        unknown = [t for t in self.truth.flaky_tests if t not in tests]
        if unknown:
            raise InputValidationError(
                f"commit {self.commit_id}: flaky test {unknown[0]!r} is not in the coverage matrix"
            )

    @property
    def flaky_classes(self) -> tuple:
        return self.truth.flaky_classes if self.truth is not None else ()


def load_metric_tables(directory: Union[str, Path]) -> Dict[MetricFamily, MetricTable]:
    """Metric CSVs named after their family, where present."""
    directory = Path(directory)
    tables: Dict[MetricFamily, MetricTable] = {}
    for family in MetricFamily:
        path = directory / f"{family.value}.csv"
        if path.is_file():
            tables[family] = ingest_metric_table(path, family)
    return tables


def load_problem(
    coverage_path: Union[str, Path],
    metrics_dir: Optional[Union[str, Path]] = None,
    truth: Optional[GroundTruthEntry] = None,
    commit_id: Optional[str] = None,
) -> LocalisationProblem:
    """A single problem from a coverage file; metrics default to its directory."""
    coverage_path = Path(coverage_path)
    matrix = parse_coverage(coverage_path)
    metrics = load_metric_tables(metrics_dir if metrics_dir is not None else coverage_path.parent)
    return LocalisationProblem(
        commit_id=commit_id or (truth.commit_id if truth else coverage_path.parent.name),
        matrix=matrix,
        metrics=metrics,
        truth=truth,
        project=truth.project if truth else DEFAULT_PROJECT,
    )


def is_dataset(path: Union[str, Path]) -> bool:
    """Whether ``path`` is a dataset directory."""
    path = Path(path)
    return path.is_dir() and (path / TRUTH_FILE).is_file()


def load_dataset(directory: Union[str, Path]) -> List[LocalisationProblem]:
    """Every problem of a dataset directory, in manifest order."""
    directory = Path(directory)
    truth_path = directory / TRUTH_FILE
    if not truth_path.is_file():
        raise InputValidationError(f"missing {TRUTH_FILE}", str(directory))

    problems: List[LocalisationProblem] = []
    for entry in load_truth(truth_path):
        commit_dir = directory / COMMITS_DIR / entry.commit_id
        coverage_path = commit_dir / COVERAGE_FILE
        if not coverage_path.is_file():
            raise InputValidationError(f"missing {COVERAGE_FILE} for commit {entry.commit_id}", str(commit_dir))
        problems.append(load_problem(coverage_path, commit_dir, truth=entry))

    logger.info("dataset_loaded", directory=str(directory), commits=len(problems))
    return problems


def write_dataset(problems: Iterable[LocalisationProblem], directory: Union[str, Path]) -> None:
    """Write problems in the dataset layout; the inverse of load_dataset."""
    directory = Path(directory)
    problems = list(problems)
    for problem in problems:
        if problem.truth is None:
            raise InputValidationError(f"commit {problem.commit_id} has no ground truth to write")
        commit_dir = directory / COMMITS_DIR / problem.commit_id
        commit_dir.mkdir(parents=True, exist_ok=True)
        write_coverage(problem.matrix, commit_dir / COVERAGE_FILE)
        for family, table in problem.metrics.items():
            write_metric_table(table, commit_dir / f"{family.value}.csv")
    write_truth([p.truth for p in problems], directory / TRUTH_FILE)
