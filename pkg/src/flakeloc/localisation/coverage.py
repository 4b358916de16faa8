"""
Coverage matrices and spectrum counts.

A coverage matrix records, for every test, which classes of the code under
test it executed and whether the test is flaky or stable. Spectrum counts
summarise one class column against those labels.
"""

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Set, Union

import numpy as np
import structlog

from ..errors import InputValidationError

logger = structlog.get_logger(__name__)

HEADER_PREFIX = ("test", "outcome")


class Outcome(Enum):
    """Per-test label."""

    FLAKY = "flaky"
    STABLE = "stable"


@dataclass(frozen=True)
class SpectrumCounts:
    """Flaky/stable tests covering and not covering one class."""

    e_f: int
    e_s: int
    n_f: int
    n_s: int

    def __post_init__(self):
        if min(self.e_f, self.e_s, self.n_f, self.n_s) < 0:
            raise InputValidationError(f"negative spectrum count in {self}")

    @property
    def total_flaky(self) -> int:
        return self.e_f + self.n_f

    @property
    def total_stable(self) -> int:
        return self.e_s + self.n_s

    def to_dict(self) -> Dict[str, int]:
        """Convert to dictionary for serialization."""
        return {"e_f": self.e_f, "e_s": self.e_s, "n_f": self.n_f, "n_s": self.n_s}


@dataclass(frozen=True)
class CoverageMatrix:
    """Boolean tests x classes activity with flaky/stable test labels."""

    test_ids: tuple
    class_ids: tuple
    activity: np.ndarray = field(repr=False)
    outcome: tuple

    def __post_init__(self):
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        try:
            object.__setattr__(self, "outcome", tuple(Outcome(o) for o in self.outcome))
        except ValueError as e:
            raise InputValidationError(f"unknown outcome label: {e}") from None

        _require_unique(self.test_ids, "test")
        _require_unique(self.class_ids, "class")

        expected = (len(self.test_ids), len(self.class_ids))
        activity = np.array(self.activity, dtype=bool)
        if activity.size == 0 and 0 in expected:
            activity = np.zeros(expected, dtype=bool)
        if activity.shape != expected:
            raise InputValidationError(
                f"activity shape {activity.shape} does not match "
                f"{expected[0]} tests x {expected[1]} classes"
            )
        if len(self.outcome) != len(self.test_ids):
            raise InputValidationError("one outcome label is required per test")

        activity.setflags(write=False)
        object.__setattr__(self, "activity", activity)

    @property
    def flaky_mask(self) -> np.ndarray:
        return np.array([o is Outcome.FLAKY for o in self.outcome], dtype=bool)

    @property
    def n_flaky(self) -> int:
        return int(self.flaky_mask.sum())

    @property
    def n_stable(self) -> int:
        return len(self.test_ids) - self.n_flaky

    def require_both_labels(self) -> None:
        """Localisation needs at least one flaky and one stable test."""
        if self.n_flaky == 0 or self.n_stable == 0:
            raise InputValidationError(
                f"localisation needs at least one flaky and one stable test "
                f"(got {self.n_flaky} flaky, {self.n_stable} stable)"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoverageMatrix):
            return NotImplemented
        return (
            self.test_ids == other.test_ids
            and self.class_ids == other.class_ids
            and self.outcome == other.outcome
            and np.array_equal(self.activity, other.activity)
        )

    def __hash__(self) -> int:
        return hash((self.test_ids, self.class_ids, self.outcome, self.activity.tobytes()))


def _require_unique(ids: Sequence[str], kind: str) -> None:
    seen: Set[str] = set()
    for identifier in ids:
        if identifier in seen:
            raise InputValidationError(f"duplicate {kind} id {identifier!r}")
        seen.add(identifier)


def parse_coverage(source: Union[str, Path, Iterable[str]]) -> CoverageMatrix:
    """Parse a coverage CSV into a validated CoverageMatrix.

    ``source`` is a path or an iterable of text lines.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            with open(path, "r", encoding="utf-8", newline="") as f:
                return _parse_rows(csv.reader(f), str(path))
        except (OSError, UnicodeDecodeError) as e:
            raise InputValidationError(f"cannot read coverage file: {e}", str(path)) from e
    return _parse_rows(csv.reader(source), "<coverage>")


def _parse_rows(reader: Iterable[List[str]], name: str) -> CoverageMatrix:
    rows = iter(reader)
    try:
        header = next(rows)
    except StopIteration:
        raise InputValidationError("empty coverage file", name)

    if tuple(h.strip() for h in header[:2]) != HEADER_PREFIX:
        raise InputValidationError("header must start with 'test,outcome'", name)
    class_ids = [h.strip() for h in header[2:]]
    try:
        _require_unique(class_ids, "class")
    except InputValidationError as e:
        raise InputValidationError(str(e), name) from e

    test_ids: List[str] = []
    seen_tests: Set[str] = set()
    outcomes: List[Outcome] = []
    activity: List[List[bool]] = []
    for line_no, row in enumerate(rows, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        where = f"{name}:{line_no}"
        if len(row) != len(class_ids) + 2:
            raise InputValidationError(
                f"ragged row: expected {len(class_ids) + 2} cells, got {len(row)}", where
            )
        test_id = row[0].strip()
        if test_id in seen_tests:
            raise InputValidationError(f"duplicate test id {test_id!r}", where)
        label = row[1].strip()
        try:
            outcome = Outcome(label)
        except ValueError:
            raise InputValidationError(f"unknown outcome label {label!r}", where) from None

        cells = []
        for class_id, cell in zip(class_ids, row[2:]):
            value = cell.strip()
            if value not in ("0", "1"):
                raise InputValidationError(
                    f"malformed cell {value!r} for class {class_id}", where
                )
            cells.append(value == "1")

        test_ids.append(test_id)
        seen_tests.add(test_id)
        outcomes.append(outcome)
        activity.append(cells)

    matrix = CoverageMatrix(
        test_ids=test_ids,
        class_ids=class_ids,
        activity=np.array(activity, dtype=bool).reshape(len(test_ids), len(class_ids)),
        outcome=outcomes,
    )
    logger.debug("coverage_parsed", source=name, tests=len(test_ids), classes=len(class_ids))
    return matrix


def serialize_coverage(matrix: CoverageMatrix) -> str:
    """Render a matrix in the coverage CSV format."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(HEADER_PREFIX) + list(matrix.class_ids))
    for test_id, outcome, row in zip(matrix.test_ids, matrix.outcome, matrix.activity):
        writer.writerow([test_id, outcome.value] + ["1" if cell else "0" for cell in row])
    return buffer.getvalue()


def write_coverage(matrix: CoverageMatrix, path: Union[str, Path]) -> None:
    """Write a matrix to ``path`` in the coverage CSV format."""
    Path(path).write_text(serialize_coverage(matrix), encoding="utf-8")


def spectrum_counts(matrix: CoverageMatrix) -> Dict[str, SpectrumCounts]:
    """Compute (e_f, e_s, n_f, n_s) for every class, in column order."""
    flaky = matrix.flaky_mask
    activity = matrix.activity
    e_f = activity[flaky].sum(axis=0)
    e_s = activity[~flaky].sum(axis=0)
    total_flaky = int(flaky.sum())
    total_stable = len(matrix.test_ids) - total_flaky

    return {
        class_id: SpectrumCounts(
            e_f=int(e_f[j]),
            e_s=int(e_s[j]),
            n_f=total_flaky - int(e_f[j]),
            n_s=total_stable - int(e_s[j]),
        )
        for j, class_id in enumerate(matrix.class_ids)
    }


def covered_by_flaky(matrix: CoverageMatrix) -> Set[str]:
    """Classes executed by at least one flaky test."""
    covered = matrix.activity[matrix.flaky_mask].any(axis=0)
    return {class_id for class_id, hit in zip(matrix.class_ids, covered) if hit}
