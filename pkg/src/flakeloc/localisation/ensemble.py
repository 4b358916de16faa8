"""
Fractional top-N voting over many scoring models.

Each model ranks the classes of a commit and votes for its top N: a class
at rank r receives 1/r of a vote, and a tied class whose best rank is within
N receives 1/(best_rank x tie size). Classes nobody voted for follow the
voted ones, ordered by their median rank across models.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..errors import InputValidationError
from ..learning.evolve import EvolvedModel
from ..learning.expression import compile_expression, evaluate_compiled
from ..metrics.features import FeatureFrame, FeatureSet, build_features, feature_names
from .dataset import LocalisationProblem
from .sbfl import FormulaId, Ranking, rank_classes, suspiciousness

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class FormulaModel:
    """A single SBFL formula used as a voter."""

    formula: FormulaId

    @property
    def name(self) -> str:
        return self.formula.name.value

    @property
    def feature_set(self) -> FeatureSet:
        return FeatureSet.SBFL

    def scores(self, problem: LocalisationProblem, frame: FeatureFrame) -> Dict[str, float]:
        return suspiciousness(problem.matrix, self.formula)


@dataclass(frozen=True)
class ExpressionModel:
    """An evolved formula used as a voter."""

    model: EvolvedModel
    _func: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_func", compile_expression(self.model.expression, self.model.feature_set))

    @property
    def name(self) -> str:
        return self.model.expression

    @property
    def feature_set(self) -> FeatureSet:
        return self.model.feature_set

    def scores(self, problem: LocalisationProblem, frame: FeatureFrame) -> Dict[str, float]:
        values = evaluate_compiled(self._func, frame.matrix(feature_names(self.feature_set)))
        return {class_id: float(v) for class_id, v in zip(frame.class_ids, values)}


class VotingConfig(BaseModel):
    """Voters and the top-N cutoff."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    top_n: int = Field(default=10, ge=1)
    models: Tuple[object, ...]

    @field_validator("models")
    @classmethod
    def _non_empty(cls, models: Tuple[object, ...]) -> Tuple[object, ...]:
        if not models:
            raise ValueError("at least one model is required")
        for model in models:
            if not isinstance(model, (FormulaModel, ExpressionModel)):
                raise ValueError(f"not a scoring model: {model!r}")
        return models


def votes_for(ranking: Ranking, class_id: str, top_n: int) -> float:
    """Fractional vote one model's ranking gives ``class_id``."""
    entry = ranking.entry(class_id)
    if entry.tie_group_size > 1 and entry.best_rank <= top_n:
        return 1.0 / (entry.best_rank * entry.tie_group_size)
    if entry.rank <= top_n:
        return 1.0 / entry.rank
    return 0.0


@dataclass(frozen=True)
class VoteResult:
    """Aggregated ranking plus the per-class vote totals and median ranks."""

    commit_id: str
    ranking: Ranking
    votes: Dict[str, float]
    median_ranks: Dict[str, float]
    fallback: bool = False

    def culprit_median_rank(self, culprits: Sequence[str]) -> Optional[float]:
        """Best median model rank among ``culprits``."""
        ranks = [self.median_ranks[c] for c in culprits if c in self.median_ranks]
        return min(ranks) if ranks else None

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "commit_id": self.commit_id,
            "ranking": [e.to_dict() for e in self.ranking],
            "votes": dict(self.votes),
            "fallback": self.fallback,
        }


def _frames(problem: LocalisationProblem, models: Sequence, dstar_exponent: float) -> Dict[FeatureSet, FeatureFrame]:
    needed = []
    for model in models:
        if isinstance(model, ExpressionModel) and model.feature_set not in needed:
            needed.append(model.feature_set)
    return {fs: build_features(problem, fs, dstar_exponent) for fs in needed}


def model_rankings(
    problem: LocalisationProblem,
    models: Sequence,
    dstar_exponent: float = 2.0,
    workers: int = 1,
) -> List[Ranking]:
    """Every model's ranking of the commit's classes, in model order."""
    problem.matrix.require_both_labels()
    frames = _frames(problem, models, dstar_exponent)

    def rank_one(model) -> Ranking:
        return rank_classes(model.scores(problem, frames.get(model.feature_set)))

    if workers > 1 and len(models) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(rank_one, models))
    return [rank_one(m) for m in models]


def aggregate(
    rankings: Sequence[Ranking],
    top_n: int,
    commit_id: str = "",
    culprits: Sequence[str] = (),
) -> VoteResult:
    """Sum fractional votes and order classes by them."""
    if not rankings:
        raise InputValidationError("no rankings to aggregate")
    class_ids = rankings[0].class_ids
    expected = set(class_ids)
    for ranking in rankings[1:]:
        if set(ranking.class_ids) != expected:
            raise InputValidationError("rankings to aggregate cover different classes")

    # Exact summation keeps totals independent of model order
    votes = {c: math.fsum(votes_for(r, c, top_n) for r in rankings) for c in class_ids}
    median_ranks = {c: float(np.median([r.entry(c).rank for r in rankings])) for c in class_ids}
    keys = {c: votes[c] if votes[c] > 0 else -median_ranks[c] for c in class_ids}

    fallback = bool(culprits) and all(votes.get(c, 0.0) == 0 for c in culprits)
    if fallback:
        logger.info("culprit_unvoted", commit_id=commit_id, models=len(rankings))
    return VoteResult(
        commit_id=commit_id,
        ranking=rank_classes(keys),
        votes=votes,
        median_ranks=median_ranks,
        fallback=fallback,
    )


def vote(
    problem: LocalisationProblem,
    config: VotingConfig,
    dstar_exponent: float = 2.0,
    workers: int = 1,
) -> VoteResult:
    """Rank the commit's classes by aggregated votes of ``config.models``."""
    rankings = model_rankings(problem, config.models, dstar_exponent, workers)
    result = aggregate(rankings, config.top_n, problem.commit_id, problem.flaky_classes)
    logger.debug("voted", commit_id=problem.commit_id, models=len(rankings), top_n=config.top_n)
    return result


def select_ensemble(
    models: Sequence[EvolvedModel],
    families: Sequence[FeatureSet],
    per_family: int,
) -> List[EvolvedModel]:
    """Up to ``per_family`` models of each listed family, in bundle order.

    Bundles holding none of ``families`` contribute their own families instead.
    """
    families = [FeatureSet(f) for f in families]
    if not any(m.feature_set in families for m in models):
        present: List[FeatureSet] = []
        for m in models:
            if m.feature_set not in present:
                present.append(m.feature_set)
        logger.warning(
            "ensemble_families_absent",
            wanted=[f.value for f in families],
            using=[f.value for f in present],
        )
        families = present

    counts: Dict[FeatureSet, int] = {f: 0 for f in families}
    selected = []
    for model in models:
        if model.feature_set in counts and counts[model.feature_set] < per_family:
            counts[model.feature_set] += 1
            selected.append(model)
    return selected


def vote_columns(result: VoteResult) -> Dict[str, Dict[str, float]]:
    """Extra ranking CSV columns of a vote result."""
    return {"votes": result.votes, "median_rank": result.median_ranks}


def read_vote_columns(path: Union[str, Path]) -> Optional[Tuple[Dict[str, float], Dict[str, float]]]:
    """Vote totals and median ranks stored in a ranking CSV, if it has them."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if not reader.fieldnames or not {"votes", "median_rank"} <= set(reader.fieldnames):
                return None
            votes: Dict[str, float] = {}
            median_ranks: Dict[str, float] = {}
            for row in reader:
                votes[row["class"]] = float(row["votes"])
                median_ranks[row["class"]] = float(row["median_rank"])
    except (OSError, ValueError, KeyError) as e:
        raise InputValidationError(f"cannot read vote columns: {e}", str(path)) from e
    return votes, median_ranks
