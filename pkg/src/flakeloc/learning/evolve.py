"""
Genetic programming of scoring formulae.

Individuals are expression trees over a feature set. Fitness is the mean,
over training commits, of the best max-tie rank reached by a true flaky
class (lower is better). Runs are repeated over seeds and cross-validation
folds; the model with the median fitness is reported.
"""

import operator
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from deap import algorithms, base, creator, gp, tools
from pydantic import BaseModel, Field, model_validator

from ..errors import InputValidationError, InvariantViolation
from ..localisation.sbfl import Ranking, rank_classes
from ..metrics.features import SBFL_TERMINALS, FeatureFrame, FeatureSet, build_features, feature_names
from .expression import (
    compile_expression,
    evaluate_compiled,
    evaluate_expression,
    expression_terminals,
    format_expression,
    parse_expression,
    primitive_set,
)

logger = structlog.get_logger(__name__)

FULL_DATA_FOLD = -1

# Mean rank first, tree size second: ties on rank prefer the smaller tree
if not hasattr(creator, "RankFitness"):
    creator.create("RankFitness", base.Fitness, weights=(-1.0, -1.0))
if not hasattr(creator, "ScoringTree"):
    creator.create("ScoringTree", gp.PrimitiveTree, fitness=creator.RankFitness)


class GPConfig(BaseModel):
    """Genetic programming parameters."""

    population: int = Field(default=40, ge=2)
    generations: int = Field(default=100, ge=0)
    seeds: int = Field(default=30, ge=1)
    folds: int = Field(default=10, ge=2)
    max_depth: int = Field(default=8, ge=1)
    tournament_size: int = Field(default=3, ge=1)
    crossover_rate: float = Field(default=0.8, ge=0.0, le=1.0)
    mutation_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    init_min_depth: int = Field(default=2, ge=0)
    init_max_depth: int = Field(default=4, ge=0)
    feature_set: FeatureSet = FeatureSet.SBFL_CHANGE
    refit_full: bool = False

    @model_validator(mode="after")
    def _depths_consistent(self) -> "GPConfig":
        if self.init_min_depth > self.init_max_depth:
            raise ValueError("init_min_depth must not exceed init_max_depth")
        if self.init_max_depth > self.max_depth:
            raise ValueError("init_max_depth must not exceed max_depth")
        return self


@dataclass(frozen=True)
class TrainingExample:
    """Normalised features and true flaky classes of one commit."""

    commit_id: str
    frame: FeatureFrame
    culprits: frozenset

    def __post_init__(self):
        object.__setattr__(self, "culprits", frozenset(self.culprits))
        if not self.culprits:
            raise InputValidationError(f"commit {self.commit_id} has no flaky class to learn from")
        unknown = self.culprits - set(self.frame.class_ids)
        if unknown:
            raise InputValidationError(f"commit {self.commit_id}: unknown flaky class {sorted(unknown)[0]!r}")


def prepare_examples(
    problems: Iterable,
    feature_set: FeatureSet,
    dstar_exponent: float = 2.0,
) -> List[TrainingExample]:
    """Feature frames plus ground truth for every problem."""
    return [
        TrainingExample(
            commit_id=p.commit_id,
            frame=build_features(p, feature_set, dstar_exponent),
            culprits=frozenset(p.flaky_classes),
        )
        for p in problems
    ]


class TrainingSet:
    """Commits stacked into one array so a tree is evaluated once per generation."""

    def __init__(self, examples: Sequence[TrainingExample], feature_set: FeatureSet):
        if not examples:
            raise InputValidationError("training set is empty")
        names = feature_names(feature_set)
        self.feature_set = FeatureSet(feature_set)
        self.commit_ids = [e.commit_id for e in examples]
        self.features = np.vstack([e.frame.matrix(names) for e in examples])
        sizes = np.array([len(e.frame.class_ids) for e in examples])
        self.offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        self.sizes = sizes
        self.culprit_mask = np.concatenate(
            [np.array([c in e.culprits for c in e.frame.class_ids], dtype=bool) for e in examples]
        )

    def __len__(self) -> int:
        return len(self.commit_ids)

    def best_ranks(self, scores: np.ndarray) -> np.ndarray:
        """Per commit, the number of classes scoring at least the best culprit."""
        culprit_scores = np.where(self.culprit_mask, scores, -np.inf)
        thresholds = np.maximum.reduceat(culprit_scores, self.offsets)
        at_least = scores >= np.repeat(thresholds, self.sizes)
        return np.add.reduceat(at_least.astype(int), self.offsets)

    def fitness(self, func) -> float:
        return float(self.best_ranks(evaluate_compiled(func, self.features)).mean())


def fitness(tree, examples: Sequence[TrainingExample], feature_set: FeatureSet) -> float:
    """Mean over commits of the best max-tie rank of a true flaky class."""
    if not examples:
        raise InputValidationError("fitness needs at least one commit")
    best_ranks = []
    for example in examples:
        ranking = rank_classes(evaluate_expression(tree, example.frame, feature_set))
        best_ranks.append(min(ranking.entry(c).rank for c in example.culprits))
    return float(np.mean(best_ranks))


@dataclass(frozen=True)
class EvolvedModel:
    """A learned formula with its training fitness and provenance."""

    expression: str
    feature_set: FeatureSet
    fitness: float
    seed: int
    fold: int = FULL_DATA_FOLD
    held_out_fitness: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "feature_set", FeatureSet(self.feature_set))

    @property
    def terminals(self) -> set:
        return expression_terminals(parse_expression(self.expression, self.feature_set))

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "expression": self.expression,
            "feature_set": self.feature_set.value,
            "fitness": self.fitness,
            "seed": self.seed,
            "fold": self.fold,
            "held_out_fitness": self.held_out_fitness,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "EvolvedModel":
        """Create from dictionary; the expression is validated against its feature set."""
        try:
            feature_set = FeatureSet(data["feature_set"])
            expression = str(data["expression"])
            held_out = data.get("held_out_fitness")
            model = cls(
                expression=expression,
                feature_set=feature_set,
                fitness=float(data["fitness"]),
                seed=int(data["seed"]),
                fold=int(data.get("fold", FULL_DATA_FOLD)),
                held_out_fitness=float(held_out) if held_out is not None else None,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputValidationError(f"malformed model record: {e}") from None
        parse_expression(model.expression, model.feature_set)
        return model


def _toolbox(config: GPConfig, training: TrainingSet) -> base.Toolbox:
    pset = primitive_set(config.feature_set)
    toolbox = base.Toolbox()
    toolbox.register("expr", gp.genHalfAndHalf, pset=pset, min_=config.init_min_depth, max_=config.init_max_depth)
    toolbox.register("individual", tools.initIterate, creator.ScoringTree, toolbox.expr)
    toolbox.register("population", tools.initRepeat, list, toolbox.individual)
    toolbox.register("evaluate", _evaluate, training=training, pset=pset)
    toolbox.register("select", tools.selTournament, tournsize=config.tournament_size)
    toolbox.register("mate", gp.cxOnePoint)
    toolbox.register("expr_mut", gp.genFull, min_=0, max_=2)
    toolbox.register("mutate", gp.mutUniform, expr=toolbox.expr_mut, pset=pset)

    limit = gp.staticLimit(key=operator.attrgetter("height"), max_value=config.max_depth)
    toolbox.decorate("mate", limit)
    toolbox.decorate("mutate", limit)
    return toolbox


def _evaluate(individual, training: TrainingSet, pset) -> Tuple[float, int]:
    return training.fitness(gp.compile(individual, pset)), len(individual)


def run_seed(fold: int, seed: int) -> int:
    """Integer RNG seed of one (seed, fold) run."""
    return int(np.random.SeedSequence([seed, fold + 1]).generate_state(1)[0])


def evolve(
    examples: Sequence[TrainingExample],
    config: GPConfig,
    seed: int,
    fold: int = FULL_DATA_FOLD,
) -> EvolvedModel:
    """Evolve one formula; the best individual of all generations is returned."""
    training = TrainingSet(examples, config.feature_set)
    random.seed(run_seed(fold, seed))

    toolbox = _toolbox(config, training)
    population = toolbox.population(n=config.population)
    hall_of_fame = tools.HallOfFame(1)
    algorithms.eaSimple(
        population,
        toolbox,
        cxpb=config.crossover_rate,
        mutpb=config.mutation_rate,
        ngen=config.generations,
        halloffame=hall_of_fame,
        verbose=False,
    )
    if not hall_of_fame:
        raise InvariantViolation("evolution produced no individual")

    best = hall_of_fame[0]
    model = EvolvedModel(
        expression=format_expression(best),
        feature_set=config.feature_set,
        fitness=float(best.fitness.values[0]),
        seed=seed,
        fold=fold,
    )
    logger.debug("model_evolved", seed=seed, fold=fold, fitness=model.fitness, size=len(best))
    return model


def fold_partition(n: int, folds: int, seed: int) -> List[List[int]]:
    """Seeded shuffle of ``range(n)`` into ``folds`` near-equal parts."""
    if n < folds:
        raise InputValidationError(f"dataset of {n} commits is smaller than {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    return [sorted(int(i) for i in part) for part in np.array_split(order, folds)]


@dataclass(frozen=True)
class FoldResult:
    """A model trained without one fold, scored on that fold."""

    fold: int
    model: EvolvedModel
    held_out_fitness: float
    held_out: tuple


def _fold_job(job) -> FoldResult:
    examples, config, seed, fold, test_index = job
    excluded = set(test_index)
    held_out = [examples[i] for i in test_index]
    train = [e for i, e in enumerate(examples) if i not in excluded]
    model = evolve(train, config, seed, fold)
    score = fitness(model.expression, held_out, config.feature_set)
    model = replace(model, held_out_fitness=score)
    return FoldResult(fold=fold, model=model, held_out_fitness=score, held_out=tuple(e.commit_id for e in held_out))


def _refit_job(job) -> EvolvedModel:
    examples, config, seed = job
    return evolve(examples, config, seed, FULL_DATA_FOLD)


def _map(func, jobs: List, workers: int) -> List:
    if workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs))


def run_seeds(base_seed: int, seeds: int) -> List[int]:
    """Seeds of the repeated runs."""
    return [base_seed + i for i in range(seeds)]


def cross_validate(
    examples: Sequence[TrainingExample],
    config: GPConfig,
    seed: int = 0,
    workers: int = 1,
) -> List[FoldResult]:
    """Evolve one model per (run seed, fold); each is scored on its held-out fold.

    The fold partition is drawn once from ``seed`` and shared by every run.
    """
    examples = list(examples)
    partition = fold_partition(len(examples), config.folds, seed)
    jobs = [
        (examples, config, run, fold, tuple(test_index))
        for run in run_seeds(seed, config.seeds)
        for fold, test_index in enumerate(partition)
    ]
    logger.info(
        "cross_validation_started",
        commits=len(examples),
        folds=config.folds,
        seeds=config.seeds,
        feature_set=config.feature_set.value,
    )
    results = _map(_fold_job, jobs, workers)
    logger.info(
        "cross_validation_finished",
        models=len(results),
        mean_held_out=float(np.mean([r.held_out_fitness for r in results])),
    )
    return results


def refit_full(
    examples: Sequence[TrainingExample],
    config: GPConfig,
    seed: int = 0,
    workers: int = 1,
) -> List[EvolvedModel]:
    """One model per run seed trained on every commit."""
    jobs = [(list(examples), config, run) for run in run_seeds(seed, config.seeds)]
    return _map(_refit_job, jobs, workers)


def select_median(models: Sequence[EvolvedModel]) -> EvolvedModel:
    """The lower-median model by training fitness."""
    if not models:
        raise InputValidationError("no models to select from")
    ordered = sorted(models, key=lambda m: m.fitness)
    return ordered[(len(ordered) - 1) // 2]


def fold_medians(results: Sequence[FoldResult]) -> Dict[int, FoldResult]:
    """Per fold, the result whose model has the median fitness across runs."""
    by_fold: Dict[int, List[FoldResult]] = {}
    for result in results:
        by_fold.setdefault(result.fold, []).append(result)
    medians = {}
    for fold, group in sorted(by_fold.items()):
        chosen = select_median([r.model for r in group])
        medians[fold] = next(r for r in group if r.model is chosen)
    return medians


def held_out_rankings(
    results: Sequence[FoldResult],
    examples: Sequence[TrainingExample],
) -> Dict[str, Ranking]:
    """Rankings of every commit by the median model of the fold holding it out."""
    by_id = {e.commit_id: e for e in examples}
    rankings: Dict[str, Ranking] = {}
    for result in fold_medians(results).values():
        model = result.model
        func = compile_expression(model.expression, model.feature_set)
        names = feature_names(model.feature_set)
        for commit_id in result.held_out:
            frame = by_id[commit_id].frame
            values = evaluate_compiled(func, frame.matrix(names))
            rankings[commit_id] = rank_classes(dict(zip(frame.class_ids, (float(v) for v in values))))
    return {e.commit_id: rankings[e.commit_id] for e in examples if e.commit_id in rankings}


def terminal_frequency(models: Sequence[EvolvedModel]) -> Dict[str, float]:
    """Fraction of models using each terminal, plus the mean over the SBFL terminals."""
    if not models:
        return {}
    names: List[str] = []
    for model in models:
        names.extend(n for n in feature_names(model.feature_set) if n not in names)
    used = [model.terminals for model in models]
    frequency = {name: sum(name in u for u in used) / len(models) for name in names}
    frequency["SBFL"] = float(np.mean([frequency[n] for n in SBFL_TERMINALS]))
    return frequency
