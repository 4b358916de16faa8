#!/usr/bin/env python3
"""
flakeloc Command Line Entry Point

Exit codes: 0 success, 1 input or validation error, 2 internal error.
Diagnostics go to standard error; rankings, tables and reports go to files
or standard output.
"""

import sys
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import structlog
import typer
from pydantic import ValidationError
from rich.console import Console

from ..errors import InputValidationError
from ..learning.bundle import read_bundles, write_bundle, write_model
from ..learning.evolve import (
    GPConfig,
    cross_validate,
    held_out_rankings,
    prepare_examples,
    refit_full,
    select_median,
    terminal_frequency,
)
from ..localisation.coverage import parse_coverage
from ..localisation.dataset import (
    COMMITS_DIR,
    COVERAGE_FILE,
    is_dataset,
    load_dataset,
    load_metric_tables,
    load_problem,
    load_truth,
)
from ..localisation.ensemble import (
    ExpressionModel,
    FormulaModel,
    VotingConfig,
    read_vote_columns,
    select_ensemble,
    vote,
    vote_columns,
)
from ..localisation.evaluate import (
    category_report,
    commit_rows,
    ddu,
    ddu_summary,
    evaluate_commit,
    overlap_report,
    project_report,
    render_report,
    rows_to_csv,
    write_rows,
)
from ..localisation.sbfl import Formula, FormulaId, localise, parse_ranking, serialize_ranking, write_ranking
from ..log import configure_logging
from ..metrics.change import commit_log_from_repo, extract_change_metrics, latest_timestamp, parse_commit_log
from ..metrics.features import FeatureSet
from ..metrics.scanner import (
    DEFAULT_CATALOG,
    SourceScanner,
    discover_class_paths,
    parse_catalog,
    read_class_paths,
    write_class_paths,
)
from ..metrics.tables import (
    MetricFamily,
    MetricTable,
    ingest_metric_table,
    merge_tables,
    serialize_metric_table,
    write_metric_table,
)
from ..settings import Settings, load_settings
from ..synth.generator import SignalMetric, SynthSpec, write_synthetic
from .manifest import write_manifest

logger = structlog.get_logger(__name__)

app = typer.Typer(
    name="flakeloc",
    help="Localise the classes responsible for flaky tests.",
    no_args_is_help=True,
    add_completion=False,
)
metrics_app = typer.Typer(help="Collect, scan and validate per-class metric tables.", no_args_is_help=True)
app.add_typer(metrics_app, name="metrics")


@dataclass
class CliState:
    """Global options shared by every command."""

    config_path: Optional[Path] = None
    log_level: Optional[str] = None
    log_json: Optional[bool] = None


@app.callback()
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", help="YAML configuration file."),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
    log_json: Optional[bool] = typer.Option(None, "--log-json/--log-console", help="Log format on stderr."),
):
    """flakeloc: spectrum-based localisation of flaky classes."""
    ctx.obj = CliState(config_path=config, log_level=log_level, log_json=log_json)


@contextmanager
def command_errors() -> Iterator[None]:
    """Map failures to exit codes 1 (input) and 2 (internal)."""
    try:
        yield
    except typer.Exit:
        raise
    except (InputValidationError, ValidationError, OSError) as e:
        logger.error("command_failed", error=str(e))
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        logger.error("internal_error", error=str(e), exc_info=True)
        typer.echo(f"internal error: {e}", err=True)
        raise typer.Exit(code=2)


def _settings(ctx: typer.Context, **overrides) -> Settings:
    state: CliState = ctx.obj or CliState()
    settings = load_settings(
        state.config_path,
        log_level=state.log_level,
        log_json=state.log_json,
        **overrides,
    )
    configure_logging(settings.log_level, settings.log_json, force=True)
    return settings


def _require_exists(path: Path) -> None:
    if not path.exists():
        raise InputValidationError("no such file or directory", str(path))


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(text, encoding="utf-8")


@app.command()
def rank(
    ctx: typer.Context,
    source: Path = typer.Argument(..., help="Coverage CSV or dataset directory."),
    formula: Formula = typer.Option(Formula.OCHIAI, "--formula", help="Suspiciousness formula."),
    dstar_exp: Optional[float] = typer.Option(None, "--dstar-exp", help="DStar exponent."),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Ranking file, or directory for a dataset."),
):
    """Rank classes with one SBFL formula."""
    with command_errors():
        settings = _settings(ctx, dstar_exponent=dstar_exp)
        _require_exists(source)
        formula_id = FormulaId(name=formula, dstar_exponent=settings.dstar_exponent)
        arguments = {"source": source, "formula": formula, "dstar_exponent": settings.dstar_exponent}

        if is_dataset(source):
            out_dir = output or settings.output_dir / f"rank-{formula.value}"
            out_dir.mkdir(parents=True, exist_ok=True)
            problems = load_dataset(source)
            for problem in problems:
                write_ranking(localise(problem.matrix, formula_id), out_dir / f"{problem.commit_id}.csv")
            write_manifest(out_dir, "rank", arguments, settings, is_directory=True)
            logger.info("rankings_written", directory=str(out_dir), commits=len(problems))
            return

        ranking = localise(parse_coverage(source), formula_id)
        _emit(serialize_ranking(ranking), output)
        if output is not None:
            write_manifest(output, "rank", arguments, settings, is_directory=False)


@app.command()
def evolve(
    ctx: typer.Context,
    dataset: Path = typer.Argument(..., help="Dataset directory."),
    features: Optional[FeatureSet] = typer.Option(None, "--features", help="Terminal set."),
    population: Optional[int] = typer.Option(None, "--population"),
    generations: Optional[int] = typer.Option(None, "--generations"),
    seeds: Optional[int] = typer.Option(None, "--seeds"),
    folds: Optional[int] = typer.Option(None, "--folds"),
    max_depth: Optional[int] = typer.Option(None, "--max-depth"),
    tournament_size: Optional[int] = typer.Option(None, "--tournament-size"),
    crossover_rate: Optional[float] = typer.Option(None, "--crossover-rate"),
    mutation_rate: Optional[float] = typer.Option(None, "--mutation-rate"),
    refit: Optional[bool] = typer.Option(None, "--refit-full/--no-refit-full", help="Also train on all commits."),
    seed: Optional[int] = typer.Option(None, "--seed"),
    workers: Optional[int] = typer.Option(None, "--workers"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Output directory."),
):
    """Evolve scoring formulae with cross-validated genetic programming."""
    with command_errors():
        gp_overrides = {
            "feature_set": features.value if features is not None else None,
            "population": population,
            "generations": generations,
            "seeds": seeds,
            "folds": folds,
            "max_depth": max_depth,
            "tournament_size": tournament_size,
            "crossover_rate": crossover_rate,
            "mutation_rate": mutation_rate,
            "refit_full": refit,
        }
        gp_overrides = {k: v for k, v in gp_overrides.items() if v is not None}
        settings = _settings(ctx, seed=seed, workers=workers, gp=gp_overrides or None)
        config: GPConfig = settings.gp
        if not is_dataset(dataset):
            raise InputValidationError("not a dataset directory", str(dataset))

        out_dir = output or settings.output_dir / f"evolve-{config.feature_set.value}"
        (out_dir / "rankings").mkdir(parents=True, exist_ok=True)

        problems = load_dataset(dataset)
        examples = prepare_examples(problems, config.feature_set, settings.dstar_exponent)
        results = cross_validate(examples, config, settings.seed, settings.workers)
        models = [r.model for r in results]
        median = select_median(models)
        if config.refit_full:
            models.extend(refit_full(examples, config, settings.seed, settings.workers))

        write_bundle(models, out_dir / "models.jsonl")
        write_model(median, out_dir / "median_model.json")
        frequency = terminal_frequency(models)
        write_rows([{"terminal": t, "frequency": f} for t, f in frequency.items()], out_dir / "terminal_frequency.csv")
        for commit_id, ranking in held_out_rankings(results, examples).items():
            write_ranking(ranking, out_dir / "rankings" / f"{commit_id}.csv")
        write_manifest(out_dir, "evolve", {"dataset": dataset}, settings, is_directory=True)

        logger.info(
            "evolution_finished",
            models=len(models),
            median_fitness=median.fitness,
            median_held_out=median.held_out_fitness,
            directory=str(out_dir),
        )
        typer.echo(median.expression)


@app.command("vote")
def vote_command(
    ctx: typer.Context,
    paths: List[Path] = typer.Argument(..., help="Model bundles followed by a coverage CSV or dataset directory."),
    formula: Optional[List[Formula]] = typer.Option(None, "--formula", help="Add an SBFL formula as a voter."),
    metrics_dir: Optional[Path] = typer.Option(None, "--metrics-dir", help="Metric CSVs for a single coverage file."),
    top_n: Optional[int] = typer.Option(None, "--top-n", help="Top-N cutoff of each voter."),
    workers: Optional[int] = typer.Option(None, "--workers"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Ranking file, or directory for a dataset."),
):
    """Rank classes by fractional votes of many models."""
    with command_errors():
        settings = _settings(ctx, workers=workers)
        *bundles, source = paths
        for path in paths:
            _require_exists(path)

        voters: List[object] = []
        if bundles:
            selected = select_ensemble(
                read_bundles(bundles),
                (settings.voting.family_a, settings.voting.family_b),
                settings.voting.models_per_family,
            )
            voters.extend(ExpressionModel(m) for m in selected)
        for name in formula or ():
            voters.append(FormulaModel(FormulaId(name=name, dstar_exponent=settings.dstar_exponent)))
        if not voters:
            raise InputValidationError("give at least one model bundle or --formula")

        config = VotingConfig(top_n=top_n or settings.voting.top_n, models=tuple(voters))
        arguments = {"bundles": bundles, "source": source, "formula": formula or [], "top_n": config.top_n}

        if is_dataset(source):
            out_dir = output or settings.output_dir / "vote"
            out_dir.mkdir(parents=True, exist_ok=True)
            problems = load_dataset(source)
            fallbacks = 0
            for problem in problems:
                result = vote(problem, config, settings.dstar_exponent, settings.workers)
                fallbacks += result.fallback
                write_ranking(result.ranking, out_dir / f"{problem.commit_id}.csv", vote_columns(result))
            write_manifest(out_dir, "vote", arguments, settings, is_directory=True)
            logger.info("votes_written", directory=str(out_dir), commits=len(problems), fallbacks=fallbacks)
            return

        problem = load_problem(source, metrics_dir)
        result = vote(problem, config, settings.dstar_exponent, settings.workers)
        _emit(serialize_ranking(result.ranking, vote_columns(result)), output)
        if output is not None:
            write_manifest(output, "vote", arguments, settings, is_directory=False)


def _read_rankings(directory: Path, commit_ids: List[str]) -> Dict[str, Path]:
    if not directory.is_dir():
        raise InputValidationError("rankings path is not a directory", str(directory))
    files = {p.stem: p for p in sorted(directory.glob("*.csv"))}
    unknown = sorted(set(files) - set(commit_ids))
    if unknown:
        raise InputValidationError(f"no truth entry for commit {unknown[0]!r}", str(directory))
    missing = [c for c in commit_ids if c not in files]
    if missing:
        raise InputValidationError(f"no ranking for commit {missing[0]!r}", str(directory))
    return {c: files[c] for c in commit_ids}


@app.command("eval")
def eval_command(
    ctx: typer.Context,
    paths: List[Path] = typer.Argument(..., help="One or more ranking directories followed by the truth manifest."),
    dataset: Optional[Path] = typer.Option(None, "--dataset", help="Dataset with coverage for R_wef."),
    top_k: int = typer.Option(5, "--top-k", help="Cutoff of the overlap analysis."),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Report directory."),
):
    """Score rankings against the ground truth."""
    with command_errors():
        settings = _settings(ctx)
        if len(paths) < 2:
            raise InputValidationError("give at least one rankings directory and a truth manifest")
        *ranking_dirs, truth_path = paths
        for path in paths:
            _require_exists(path)
        truth = load_truth(truth_path)
        commit_ids = [e.commit_id for e in truth]

        dataset = dataset or (truth_path.parent if is_dataset(truth_path.parent) else None)
        matrices = {}
        if dataset is not None:
            for entry in truth:
                coverage = dataset / COMMITS_DIR / entry.commit_id / COVERAGE_FILE
                if not coverage.is_file():
                    raise InputValidationError(f"missing coverage for commit {entry.commit_id}", str(dataset))
                matrices[entry.commit_id] = parse_coverage(coverage)
        else:
            logger.warning("r_wef_skipped", reason="no dataset with coverage")

        out_dir = output or settings.output_dir / "eval"
        out_dir.mkdir(parents=True, exist_ok=True)
        console = Console()
        names: List[str] = []
        all_rankings: Dict[str, Dict[str, object]] = {}

        for index, directory in enumerate(ranking_dirs):
            name = directory.name if directory.name not in names else f"{directory.name}-{index}"
            names.append(name)
            files = _read_rankings(directory, commit_ids)
            rankings = {c: parse_ranking(p) for c, p in files.items()}
            all_rankings[name] = rankings

            results = []
            for entry in truth:
                fallback_rank = None
                columns = read_vote_columns(files[entry.commit_id])
                if columns is not None:
                    votes, median_ranks = columns
                    missing = [c for c in entry.flaky_classes if c not in median_ranks]
                    if missing:
                        raise InputValidationError(
                            f"truth class {missing[0]!r} missing from ranking", str(files[entry.commit_id])
                        )
                    if all(votes.get(c, 0.0) == 0 for c in entry.flaky_classes):
                        fallback_rank = min(median_ranks[c] for c in entry.flaky_classes)
                results.append(
                    evaluate_commit(rankings[entry.commit_id], entry, matrices.get(entry.commit_id), fallback_rank)
                )

            target = out_dir if len(ranking_dirs) == 1 else out_dir / name
            target.mkdir(parents=True, exist_ok=True)
            write_rows(commit_rows(results), target / "report.csv")
            projects = project_report(results)
            write_rows([r.to_dict() for r in projects], target / "projects.csv")
            render_report(projects, f"{name}: projects", console)
            if any(r.categories for r in results):
                categories = category_report(results)
                write_rows([r.to_dict() for r in categories], target / "categories.csv")
                render_report(categories, f"{name}: categories", console)

        if len(ranking_dirs) > 1:
            overlap = overlap_report(all_rankings, truth, top_k)
            write_rows(overlap.rows(), out_dir / "overlap.csv")
            console.print(f"top-{top_k} overlap of all techniques: {overlap.overall} commits")

        write_manifest(out_dir, "eval", {"rankings": ranking_dirs, "truth": truth_path, "top_k": top_k}, settings, True)


@app.command("ddu")
def ddu_command(
    ctx: typer.Context,
    source: Path = typer.Argument(..., help="Coverage CSV or dataset directory."),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="CSV file for the DDU rows."),
):
    """Diagnosability (density, diversity, uniqueness) of test suites."""
    with command_errors():
        settings = _settings(ctx)
        _require_exists(source)

        if not is_dataset(source):
            result = ddu(parse_coverage(source))
            _emit(rows_to_csv([result.to_dict()]), output)
            if output is not None:
                write_manifest(output, "ddu", {"source": source}, settings, is_directory=False)
            return

        rows = []
        per_project = []
        for problem in load_dataset(source):
            result = ddu(problem.matrix)
            rows.append({"commit_id": problem.commit_id, "project": problem.project, **result.to_dict()})
            per_project.append((problem.project, result))
        summary = ddu_summary(per_project)
        _emit(rows_to_csv(rows), output)
        if output is not None:
            write_rows(summary, output.with_name(output.stem + "_summary.csv"))
            write_manifest(output, "ddu", {"source": source}, settings, is_directory=False)
        else:
            sys.stdout.write("\n" + rows_to_csv(summary))


@metrics_app.command("change")
def metrics_change(
    ctx: typer.Context,
    log: Path = typer.Argument(..., help="Commit log (JSON lines) or a local git repository."),
    class_paths: Path = typer.Option(..., "--class-paths", help="CSV with class,path columns."),
    analysis_time: Optional[int] = typer.Option(None, "--analysis-time", help="Unix seconds; default latest commit."),
    output: Optional[Path] = typer.Option(None, "--output", "-o"),
):
    """Unique changes, age and developers per class from history."""
    with command_errors():
        settings = _settings(ctx)
        _require_exists(log)
        commits = commit_log_from_repo(log) if log.is_dir() else parse_commit_log(log)
        when = analysis_time if analysis_time is not None else latest_timestamp(commits)
        table = extract_change_metrics(commits, read_class_paths(class_paths), when)
        _emit(serialize_metric_table(table), output)
        if output is not None:
            arguments = {"log": log, "class_paths": class_paths, "analysis_time": when}
            write_manifest(output, "metrics change", arguments, settings, is_directory=False)


class ScanFamily(str, Enum):
    """Metric families the scanner can produce."""

    SIZE = "size"
    FLAKINESS = "flakiness"
    BOTH = "both"


@metrics_app.command("scan")
def metrics_scan(
    ctx: typer.Context,
    source_root: Path = typer.Argument(..., help="Source tree to scan."),
    class_paths: Optional[Path] = typer.Option(None, "--class-paths", help="CSV with class,path columns."),
    family: ScanFamily = typer.Option(ScanFamily.BOTH, "--family"),
    catalog: Optional[Path] = typer.Option(None, "--catalog", help="Pattern catalog for flakiness metrics."),
    ingested: Optional[Path] = typer.Option(
        None, "--ingested", help="Directory of size.csv/flakiness.csv whose rows replace scanned rows."
    ),
    workers: Optional[int] = typer.Option(None, "--workers"),
    output_dir: Optional[Path] = typer.Option(None, "--output-dir", "-o"),
):
    """Size and flakiness metrics by lexing source files."""
    with command_errors():
        settings = _settings(ctx, workers=workers, catalog_file=catalog)
        if not source_root.is_dir():
            raise InputValidationError("source root is not a directory", str(source_root))
        if ingested is not None and not ingested.is_dir():
            raise InputValidationError("ingested metrics path is not a directory", str(ingested))
        mapping = read_class_paths(class_paths) if class_paths else discover_class_paths(source_root)
        scanner = SourceScanner(source_root, mapping, settings.workers)
        overrides = load_metric_tables(ingested) if ingested is not None else {}

        def finish(table: MetricTable) -> MetricTable:
            override = overrides.get(table.family)
            return merge_tables(table, override) if override is not None else table

        out_dir = output_dir or settings.output_dir / "metrics"
        out_dir.mkdir(parents=True, exist_ok=True)
        write_class_paths(mapping, out_dir / "class_paths.csv")
        if family in (ScanFamily.SIZE, ScanFamily.BOTH):
            write_metric_table(finish(scanner.size_metrics()), out_dir / "size.csv")
        if family in (ScanFamily.FLAKINESS, ScanFamily.BOTH):
            patterns = parse_catalog(settings.catalog_file) if settings.catalog_file else DEFAULT_CATALOG
            write_metric_table(finish(scanner.flakiness_metrics(patterns)), out_dir / "flakiness.csv")
        arguments = {
            "source_root": source_root,
            "class_paths": class_paths,
            "family": family.value,
            "ingested": ingested,
        }
        write_manifest(out_dir, "metrics scan", arguments, settings, is_directory=True)
        logger.info("metrics_scanned", classes=len(mapping), directory=str(out_dir))


@metrics_app.command("ingest")
def metrics_ingest(
    ctx: typer.Context,
    source: Path = typer.Argument(..., help="Metrics CSV."),
    family: MetricFamily = typer.Option(..., "--family"),
    output: Optional[Path] = typer.Option(None, "--output", "-o"),
):
    """Validate a metrics CSV and re-export it in canonical column order."""
    with command_errors():
        _settings(ctx)
        _emit(serialize_metric_table(ingest_metric_table(source, family)), output)


@app.command()
def synth(
    ctx: typer.Context,
    output_dir: Path = typer.Argument(..., help="Dataset directory to create."),
    commits: int = typer.Option(50, "--commits"),
    tests: int = typer.Option(100, "--tests"),
    classes: int = typer.Option(200, "--classes"),
    flaky_fraction: float = typer.Option(0.1, "--flaky-fraction"),
    bias: float = typer.Option(0.8, "--bias"),
    baseline: float = typer.Option(0.2, "--baseline"),
    signal: float = typer.Option(0.0, "--signal"),
    signal_fraction: float = typer.Option(1.0, "--signal-fraction"),
    signal_metric: SignalMetric = typer.Option(SignalMetric.BOTH, "--signal-metric"),
    project: str = typer.Option("synthetic", "--project"),
    seed: Optional[int] = typer.Option(None, "--seed"),
):
    """Generate a synthetic dataset with planted culprits."""
    with command_errors():
        settings = _settings(ctx, seed=seed)
        spec = SynthSpec(
            commits=commits,
            tests=tests,
            classes=classes,
            flaky_fraction=flaky_fraction,
            bias=bias,
            baseline=baseline,
            signal=signal,
            signal_fraction=signal_fraction,
            signal_metric=signal_metric,
            project=project,
            seed=settings.seed,
        )
        write_synthetic(spec, output_dir)
        write_manifest(output_dir, "synth", spec.model_dump(mode="json"), settings, is_directory=True)


if __name__ == "__main__":
    app()
