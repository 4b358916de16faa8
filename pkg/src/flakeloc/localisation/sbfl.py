"""
Spectrum-based localisation of flaky classes.

The four classic suspiciousness formulae are applied with flaky tests in
place of failing tests and stable tests in place of passing ones. Rankings
use the max tie-breaker: every member of a tie group receives the worst rank
of the group.
"""

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import rankdata

from ..errors import InputValidationError
from .coverage import CoverageMatrix, SpectrumCounts, spectrum_counts

logger = structlog.get_logger(__name__)

RANKING_COLUMNS = ("class", "score", "rank", "best_rank", "tie_group_size")


class Formula(Enum):
    """Suspiciousness formulae adapted to flaky/stable labels."""

    OCHIAI = "ochiai"
    BARINEL = "barinel"
    TARANTULA = "tarantula"
    DSTAR = "dstar"


SBFL_FORMULAE = tuple(f.value for f in Formula)


class FormulaId(BaseModel):
    """A formula name plus the DStar exponent."""

    model_config = ConfigDict(frozen=True)

    name: Formula = Formula.OCHIAI
    dstar_exponent: float = Field(default=2.0, gt=0)


def score_arrays(
    e_f: np.ndarray,
    e_s: np.ndarray,
    n_f: np.ndarray,
    n_s: np.ndarray,
    formula: FormulaId,
) -> np.ndarray:
    """Vectorised suspiciousness over per-class count arrays.

    A zero denominator yields +inf when e_f > 0 and 0 otherwise.
    """
    e_f, e_s, n_f, n_s = (np.asarray(a, dtype=float) for a in (e_f, e_s, n_f, n_s))
    sentinel = np.where(e_f > 0, np.inf, 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        if formula.name is Formula.OCHIAI:
            denominator = np.sqrt((e_f + n_f) * (e_f + e_s))
            zero = denominator == 0
            value = e_f / np.where(zero, 1.0, denominator)
        elif formula.name is Formula.BARINEL:
            denominator = e_s + e_f
            zero = denominator == 0
            value = 1.0 - e_s / np.where(zero, 1.0, denominator)
        elif formula.name is Formula.TARANTULA:
            total_flaky = e_f + n_f
            total_stable = e_s + n_s
            zero = (total_flaky == 0) | (total_stable == 0)
            flaky_ratio = e_f / np.where(total_flaky == 0, 1.0, total_flaky)
            stable_ratio = e_s / np.where(total_stable == 0, 1.0, total_stable)
            denominator = flaky_ratio + stable_ratio
            zero = zero | (denominator == 0)
            value = flaky_ratio / np.where(denominator == 0, 1.0, denominator)
        elif formula.name is Formula.DSTAR:
            denominator = e_s * n_f
            zero = denominator == 0
            value = np.power(e_f, formula.dstar_exponent) / np.where(zero, 1.0, denominator)
        else:
            raise InputValidationError(f"unknown formula {formula.name!r}")

    return np.where(zero, sentinel, value)


def score(counts: SpectrumCounts, formula: FormulaId) -> float:
    """Suspiciousness of one class."""
    result = score_arrays(
        np.array([counts.e_f]),
        np.array([counts.e_s]),
        np.array([counts.n_f]),
        np.array([counts.n_s]),
        formula,
    )
    return float(result[0])


def suspiciousness(matrix: CoverageMatrix, formula: FormulaId) -> Dict[str, float]:
    """Scores for every class of ``matrix``, in column order."""
    counts = spectrum_counts(matrix)
    columns = [np.array([getattr(c, name) for c in counts.values()]) for name in ("e_f", "e_s", "n_f", "n_s")]
    values = score_arrays(*columns, formula) if counts else np.array([])
    return {class_id: float(v) for class_id, v in zip(counts.keys(), values)}


@dataclass(frozen=True)
class RankingEntry:
    """One ranked class."""

    class_id: str
    score: float
    rank: int
    best_rank: int
    tie_group_size: int

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "class": self.class_id,
            "score": self.score,
            "rank": self.rank,
            "best_rank": self.best_rank,
            "tie_group_size": self.tie_group_size,
        }


@dataclass(frozen=True)
class Ranking:
    """Classes ordered by descending score, ranked with the max tie-breaker."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "_index", {e.class_id: e for e in self.entries})

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, class_id: object) -> bool:
        return class_id in self._index

    @property
    def class_ids(self) -> List[str]:
        return [e.class_id for e in self.entries]

    def entry(self, class_id: str) -> RankingEntry:
        try:
            return self._index[class_id]
        except KeyError:
            raise InputValidationError(f"unknown class {class_id!r}") from None

    def scores(self) -> Dict[str, float]:
        return {e.class_id: e.score for e in self.entries}

    def top(self, n: int) -> List[str]:
        """Classes whose max-tie rank is within ``n``."""
        return [e.class_id for e in self.entries if e.rank <= n]


def rank_classes(scores: Mapping[str, float]) -> Ranking:
    """Rank classes by descending score with the max tie-breaker.

    Display order breaks ties by class id; the rank fields do not depend on it.
    """
    if not scores:
        raise InputValidationError("cannot rank an empty score map")

    class_ids = list(scores.keys())
    values = np.array([float(scores[c]) for c in class_ids], dtype=float)
    if np.isnan(values).any():
        bad = [c for c, v in zip(class_ids, values) if math.isnan(v)]
        raise InputValidationError(f"non-finite suspiciousness for {', '.join(sorted(bad))}")

    worst = rankdata(-values, method="max").astype(int)
    best = rankdata(-values, method="min").astype(int)

    order = sorted(range(len(class_ids)), key=lambda i: (-values[i], class_ids[i]))
    entries = [
        RankingEntry(
            class_id=class_ids[i],
            score=float(values[i]),
            rank=int(worst[i]),
            best_rank=int(best[i]),
            tie_group_size=int(worst[i] - best[i] + 1),
        )
        for i in order
    ]
    return Ranking(entries)


def localise(matrix: CoverageMatrix, formula: FormulaId) -> Ranking:
    """Rank every class of ``matrix`` with a single formula."""
    matrix.require_both_labels()
    ranking = rank_classes(suspiciousness(matrix, formula))
    logger.debug("localised", formula=formula.name.value, classes=len(ranking))
    return ranking


def format_score(value: float) -> str:
    """Shortest exact text form of a score; infinities as ``inf``."""
    return repr(float(value))


def serialize_ranking(ranking: Ranking, extra: Optional[Mapping[str, Mapping[str, float]]] = None) -> str:
    """Render a ranking as CSV; ``extra`` adds named per-class columns."""
    extra = extra or {}
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(RANKING_COLUMNS) + list(extra.keys()))
    for e in ranking.entries:
        row = [e.class_id, format_score(e.score), e.rank, e.best_rank, e.tie_group_size]
        row.extend(format_score(column[e.class_id]) for column in extra.values())
        writer.writerow(row)
    return buffer.getvalue()


def write_ranking(
    ranking: Ranking,
    path: Union[str, Path],
    extra: Optional[Mapping[str, Mapping[str, float]]] = None,
) -> None:
    """Write a ranking CSV to ``path``."""
    Path(path).write_text(serialize_ranking(ranking, extra), encoding="utf-8")


def parse_ranking(source: Union[str, Path, Iterable[str]]) -> Ranking:
    """Read a ranking CSV; scores are re-ranked so the rank fields are trusted
    only after they agree with the scores."""
    name = "<ranking>"
    if isinstance(source, (str, Path)):
        name = str(source)
        try:
            lines: Sequence[str] = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise InputValidationError(f"cannot read ranking file: {e}", name) from e
    else:
        lines = list(source)

    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(RANKING_COLUMNS) <= set(reader.fieldnames):
        raise InputValidationError(f"ranking header must contain {', '.join(RANKING_COLUMNS)}", name)

    scores: Dict[str, float] = {}
    recorded: Dict[str, int] = {}
    for line_no, row in enumerate(reader, start=2):
        class_id = row["class"]
        if class_id in scores:
            raise InputValidationError(f"duplicate class id {class_id!r}", f"{name}:{line_no}")
        try:
            scores[class_id] = float(row["score"])
            recorded[class_id] = int(row["rank"])
        except ValueError as e:
            raise InputValidationError(f"malformed ranking row: {e}", f"{name}:{line_no}") from None

    ranking = rank_classes(scores)
    mismatched = [c for c in scores if ranking.entry(c).rank != recorded[c]]
    if mismatched:
        raise InputValidationError(
            f"recorded ranks disagree with scores for {', '.join(sorted(mismatched)[:5])}", name
        )
    return ranking
