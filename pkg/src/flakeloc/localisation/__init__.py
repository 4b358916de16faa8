"""
flakeloc Localisation Module

Coverage matrices, spectrum counts and single-formula rankings of classes
against flaky and stable tests.
"""

from .coverage import CoverageMatrix, Outcome, SpectrumCounts, covered_by_flaky, parse_coverage, spectrum_counts
from .sbfl import Formula, FormulaId, Ranking, RankingEntry, localise, rank_classes, score

__all__ = [
    "CoverageMatrix",
    "Outcome",
    "SpectrumCounts",
    "covered_by_flaky",
    "parse_coverage",
    "spectrum_counts",
    "Formula",
    "FormulaId",
    "Ranking",
    "RankingEntry",
    "localise",
    "rank_classes",
    "score",
]
