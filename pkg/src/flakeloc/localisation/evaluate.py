"""
Evaluation of class rankings against known flaky classes.

Metrics: acc@n (commits whose best flaky class ranks within n under the max
tie-breaker), wasted effort (wef), wef relative to the classes covered by
flaky tests (R_wef), and the density-diversity-uniqueness (DDU)
diagnosability of a test suite. Results can be grouped by project, by
flakiness category, and compared across techniques by top-k overlap.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from rich.console import Console
from rich.table import Table

from ..errors import InputValidationError
from .coverage import CoverageMatrix, covered_by_flaky
from .dataset import Category, GroundTruthEntry
from .sbfl import Ranking, format_score

logger = structlog.get_logger(__name__)

ACC_LEVELS = (1, 3, 5, 10)
BASELINE_R_WEF = 50.0
TOTAL_ROW = "Total"
PERCENT_ROW = "Perc (%)"


def best_rank(ranking: Ranking, culprits: Iterable[str]) -> int:
    """Smallest max-tie rank among ``culprits``."""
    culprits = list(culprits)
    if not culprits:
        raise InputValidationError("no flaky class to evaluate")
    missing = [c for c in culprits if c not in ranking]
    if missing:
        raise InputValidationError(f"truth class {missing[0]!r} missing from ranking")
    return min(ranking.entry(c).rank for c in culprits)


def acc_at_n(
    rankings: Mapping[str, Ranking],
    truth: Sequence[GroundTruthEntry],
    n: int,
) -> int:
    """Number of commits whose best flaky class ranks within ``n``."""
    count = 0
    for entry in truth:
        if entry.commit_id not in rankings:
            raise InputValidationError(f"no ranking for commit {entry.commit_id}")
        if best_rank(rankings[entry.commit_id], entry.flaky_classes) <= n:
            count += 1
    return count


def wef(scores: Mapping[str, float], flaky: str) -> float:
    """Classes scored above ``flaky`` plus half of those tied with it, plus 1/2.

    ``{A: 0.9, B: 0.9, C: 0.5}`` with B flaky gives 0 + 1/2 + 1/2 = 1.0; a value
    of 2.0 needs another class above the tie, as in
    ``{A: 0.95, B: 0.9, C: 0.9, D: 0.5}``.
    """
    if flaky not in scores:
        raise InputValidationError(f"unknown class {flaky!r}")
    target = scores[flaky]
    greater = sum(1 for c, s in scores.items() if s > target)
    equal = sum(1 for c, s in scores.items() if s == target and c != flaky)
    return greater + equal / 2 + 0.5


def commit_wef(scores: Mapping[str, float], culprits: Iterable[str]) -> float:
    """Smallest wef over the true flaky classes."""
    return min(wef(scores, c) for c in culprits)


def r_wef(wef_value: float, covered: int) -> Tuple[float, bool]:
    """Percentage of flaky-covered classes wasted; returns (value, clamped)."""
    if covered < 1:
        raise InputValidationError("R_wef needs at least one class covered by flaky tests")
    value = 100.0 * (wef_value + 1) / covered
    if value > 100.0:
        logger.warning("r_wef_clamped", wef=wef_value, covered=covered, value=value)
        return 100.0, True
    return value, False


@dataclass(frozen=True)
class DDUResult:
    """Diagnosability components of a coverage matrix."""

    density: float
    diversity: float
    uniqueness: float
    ddu: float

    def to_dict(self) -> Dict[str, float]:
        """Convert to dictionary for serialization."""
        return {
            "density": self.density,
            "diversity": self.diversity,
            "uniqueness": self.uniqueness,
            "ddu": self.ddu,
        }


def ddu(matrix: CoverageMatrix) -> DDUResult:
    """Normalised density, diversity and uniqueness, and their product."""
    activity = matrix.activity
    n_tests, n_classes = activity.shape
    if n_tests == 0 or n_classes == 0:
        raise InputValidationError("DDU needs a non-empty coverage matrix")

    rho = float(activity.sum()) / (n_tests * n_classes)
    density = 1.0 - abs(1.0 - 2.0 * rho)

    if n_tests == 1:
        diversity = 1.0
    else:
        _, group_sizes = np.unique(activity, axis=0, return_counts=True)
        same = float((group_sizes * (group_sizes - 1)).sum())
        diversity = 1.0 - same / (n_tests * (n_tests - 1))

    distinct_columns = np.unique(activity.T, axis=0).shape[0]
    uniqueness = distinct_columns / n_classes
    return DDUResult(
        density=density,
        diversity=diversity,
        uniqueness=uniqueness,
        ddu=density * diversity * uniqueness,
    )


@dataclass(frozen=True)
class CommitResult:
    """Evaluation of one commit's ranking."""

    commit_id: str
    project: str
    best_rank: int
    wef: float
    categories: tuple = ()
    r_wef: Optional[float] = None
    covered: Optional[int] = None
    r_wef_clamped: bool = False
    fallback: bool = False
    fallback_median_rank: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "commit_id": self.commit_id,
            "project": self.project,
            "best_rank": self.best_rank,
            "wef": self.wef,
            "r_wef": self.r_wef,
            "covered": self.covered,
            "r_wef_clamped": self.r_wef_clamped,
            "categories": [c.value for c in self.categories],
            "fallback": self.fallback,
            "fallback_median_rank": self.fallback_median_rank,
        }


def evaluate_commit(
    ranking: Ranking,
    truth: GroundTruthEntry,
    matrix: Optional[CoverageMatrix] = None,
    fallback_median_rank: Optional[float] = None,
) -> CommitResult:
    """Best rank, wef and (when coverage is known) R_wef of one commit.

    ``fallback_median_rank`` marks a commit no voter picked a culprit for.
    """
    rank = best_rank(ranking, truth.flaky_classes)
    wasted = commit_wef(ranking.scores(), truth.flaky_classes)

    relative = covered = None
    clamped = False
    if matrix is not None:
        covered = len(covered_by_flaky(matrix))
        relative, clamped = r_wef(wasted, covered)

    return CommitResult(
        commit_id=truth.commit_id,
        project=truth.project,
        best_rank=rank,
        wef=wasted,
        categories=truth.categories,
        r_wef=relative,
        covered=covered,
        r_wef_clamped=clamped,
        fallback=fallback_median_rank is not None,
        fallback_median_rank=fallback_median_rank,
    )


@dataclass(frozen=True)
class ReportRow:
    """Aggregate metrics over a group of commits."""

    label: str
    commits: int
    acc: Dict[int, float]
    wef_mean: Optional[float] = None
    wef_median: Optional[float] = None
    r_wef_mean: Optional[float] = None
    r_wef_median: Optional[float] = None
    fallbacks: int = 0

    @property
    def outperforms_baseline(self) -> Optional[bool]:
        if self.r_wef_mean is None:
            return None
        return self.r_wef_mean < BASELINE_R_WEF

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        data: Dict[str, object] = {"label": self.label, "commits": self.commits}
        data.update({f"acc@{n}": v for n, v in self.acc.items()})
        data.update(
            {
                "wef_mean": self.wef_mean,
                "wef_median": self.wef_median,
                "r_wef_mean": self.r_wef_mean,
                "r_wef_median": self.r_wef_median,
                "outperforms_baseline": self.outperforms_baseline,
                "fallbacks": self.fallbacks,
            }
        )
        return data


def summarise(results: Sequence[CommitResult], label: str) -> ReportRow:
    """acc@n counts and mean/median wef and R_wef of ``results``."""
    ranks = [r.best_rank for r in results]
    wefs = [r.wef for r in results]
    relatives = [r.r_wef for r in results if r.r_wef is not None]
    return ReportRow(
        label=label,
        commits=len(results),
        acc={n: sum(1 for rank in ranks if rank <= n) for n in ACC_LEVELS},
        wef_mean=float(np.mean(wefs)) if wefs else None,
        wef_median=float(np.median(wefs)) if wefs else None,
        r_wef_mean=float(np.mean(relatives)) if relatives else None,
        r_wef_median=float(np.median(relatives)) if relatives else None,
        fallbacks=sum(1 for r in results if r.fallback),
    )


def project_report(results: Sequence[CommitResult]) -> List[ReportRow]:
    """One row per project, then the total and the acc@n percentages."""
    by_project: Dict[str, List[CommitResult]] = {}
    for result in results:
        by_project.setdefault(result.project, []).append(result)

    rows = [summarise(group, project) for project, group in sorted(by_project.items())]
    total = summarise(results, TOTAL_ROW)
    rows.append(total)
    if total.commits:
        rows.append(
            ReportRow(
                label=PERCENT_ROW,
                commits=total.commits,
                acc={n: 100.0 * v / total.commits for n, v in total.acc.items()},
            )
        )
    return rows


def category_report(results: Sequence[CommitResult]) -> List[ReportRow]:
    """Rows per flakiness category; a commit counts in each of its categories."""
    by_category: Dict[Category, List[CommitResult]] = {c: [] for c in Category}
    for result in results:
        categories = result.categories
        if not categories:
            logger.warning("commit_unlabeled", commit_id=result.commit_id)
            categories = (Category.AMBIGUOUS,)
        for category in categories:
            by_category[category].append(result)

    rows = [summarise(group, category.value) for category, group in by_category.items() if group]
    rows.append(summarise(results, TOTAL_ROW))
    return rows


@dataclass(frozen=True)
class OverlapReport:
    """Commits each technique localises within the top k, and their intersections."""

    k: int
    hits: Dict[str, frozenset]
    intersections: Dict[Tuple[str, ...], int] = field(default_factory=dict)

    @property
    def overall(self) -> int:
        return len(frozenset.intersection(*self.hits.values())) if self.hits else 0

    def rows(self) -> List[Dict[str, object]]:
        return [
            {"techniques": "&".join(names), "size": len(names), "commits": count}
            for names, count in self.intersections.items()
        ]


def overlap_report(
    rankings: Mapping[str, Mapping[str, Ranking]],
    truth: Sequence[GroundTruthEntry],
    k: int = 5,
) -> OverlapReport:
    """Intersection sizes of every subset of techniques' top-k successes."""
    if len(rankings) < 2:
        raise InputValidationError("overlap needs at least two rankings")

    hits: Dict[str, frozenset] = {}
    for name, per_commit in rankings.items():
        hits[name] = frozenset(
            e.commit_id
            for e in truth
            if e.commit_id in per_commit and best_rank(per_commit[e.commit_id], e.flaky_classes) <= k
        )

    names = list(hits)
    intersections: Dict[Tuple[str, ...], int] = {}
    for size in range(1, len(names) + 1):
        for subset in itertools.combinations(names, size):
            intersections[subset] = len(frozenset.intersection(*(hits[n] for n in subset)))
    return OverlapReport(k=k, hits=hits, intersections=intersections)


def ddu_summary(rows: Sequence[Tuple[str, DDUResult]]) -> List[Dict[str, object]]:
    """Min, max and mean of each DDU component per project."""
    by_project: Dict[str, List[DDUResult]] = {}
    for project, result in rows:
        by_project.setdefault(project, []).append(result)

    summary = []
    for project, results in sorted(by_project.items()):
        row: Dict[str, object] = {"project": project, "commits": len(results)}
        for component in ("density", "diversity", "uniqueness", "ddu"):
            values = [getattr(r, component) for r in results]
            row[f"{component}_min"] = min(values)
            row[f"{component}_max"] = max(values)
            row[f"{component}_mean"] = float(np.mean(values))
        summary.append(row)
    return summary


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() and math.isfinite(value) else format_score(value)
    return str(value)


def rows_to_csv(rows: Sequence[Mapping[str, object]]) -> str:
    """CSV text of dictionaries sharing the first row's keys."""
    buffer = io.StringIO()
    if not rows:
        return ""
    writer = csv.writer(buffer, lineterminator="\n")
    columns = list(rows[0].keys())
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


def commit_rows(results: Sequence[CommitResult]) -> List[Dict[str, object]]:
    """Flat per-commit rows for report.csv."""
    rows = []
    for r in results:
        rows.append(
            {
                "commit_id": r.commit_id,
                "project": r.project,
                "best_rank": r.best_rank,
                "wef": r.wef,
                "r_wef": r.r_wef,
                "covered": r.covered,
                "r_wef_clamped": r.r_wef_clamped,
                "categories": ";".join(c.value for c in r.categories),
                "fallback": r.fallback,
                "fallback_median_rank": r.fallback_median_rank,
            }
        )
    return rows


def write_rows(rows: Sequence[Mapping[str, object]], path: Union[str, Path]) -> None:
    """Write dictionaries as CSV to ``path``."""
    Path(path).write_text(rows_to_csv(rows), encoding="utf-8")


def render_report(rows: Sequence[ReportRow], title: str, console: Optional[Console] = None) -> None:
    """Print summary rows as a rich table."""
    console = console or Console()
    table = Table(title=title)
    table.add_column("Group")
    table.add_column("Commits", justify="right")
    for n in ACC_LEVELS:
        table.add_column(f"acc@{n}", justify="right")
    for name in ("wef mean", "wef median", "R_wef mean", "R_wef median", "< baseline"):
        table.add_column(name, justify="right")

    for row in rows:
        acc = [_format_number(row.acc[n]) for n in ACC_LEVELS]
        table.add_row(
            row.label,
            str(row.commits),
            *acc,
            _format_number(row.wef_mean),
            _format_number(row.wef_median),
            _format_number(row.r_wef_mean),
            _format_number(row.r_wef_median),
            "" if row.outperforms_baseline is None else ("yes" if row.outperforms_baseline else "no"),
        )
    console.print(table)


def _format_number(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{value:g}" if float(value).is_integer() else f"{value:.2f}"
