#!/usr/bin/env python3
"""
Suspiciousness formulae and max tie-breaker ranking tests.
"""

import math

import numpy as np
import pytest

from conftest import make_matrix
from flakeloc.errors import InputValidationError
from flakeloc.localisation.coverage import SpectrumCounts, spectrum_counts
from flakeloc.localisation.sbfl import (
    Formula,
    FormulaId,
    localise,
    parse_ranking,
    rank_classes,
    score,
    serialize_ranking,
    suspiciousness,
)

OCHIAI = FormulaId(name=Formula.OCHIAI)
BARINEL = FormulaId(name=Formula.BARINEL)
TARANTULA = FormulaId(name=Formula.TARANTULA)
DSTAR = FormulaId(name=Formula.DSTAR)


def reference_score(c: SpectrumCounts, formula: FormulaId) -> float:
    """Scalar evaluator written independently of the vectorised one."""
    sentinel = math.inf if c.e_f > 0 else 0.0
    if formula.name is Formula.OCHIAI:
        d = math.sqrt((c.e_f + c.n_f) * (c.e_f + c.e_s))
        return c.e_f / d if d else sentinel
    if formula.name is Formula.BARINEL:
        d = c.e_s + c.e_f
        return 1 - c.e_s / d if d else sentinel
    if formula.name is Formula.TARANTULA:
        if c.e_f + c.n_f == 0 or c.e_s + c.n_s == 0:
            return sentinel
        f = c.e_f / (c.e_f + c.n_f)
        s = c.e_s / (c.e_s + c.n_s)
        return f / (f + s) if f + s else sentinel
    d = c.e_s * c.n_f
    return c.e_f ** formula.dstar_exponent / d if d else sentinel


class TestScore:
    def test_ochiai(self):
        assert score(SpectrumCounts(e_f=2, e_s=1, n_f=0, n_s=5), OCHIAI) == pytest.approx(2 / math.sqrt(6))

    def test_barinel_flaky_only(self):
        assert score(SpectrumCounts(e_f=3, e_s=0, n_f=0, n_s=4), BARINEL) == 1.0

    def test_tarantula_no_stable_coverage(self):
        assert score(SpectrumCounts(e_f=1, e_s=0, n_f=0, n_s=4), TARANTULA) == 1.0

    def test_dstar(self):
        assert score(SpectrumCounts(e_f=3, e_s=2, n_f=1, n_s=0), DSTAR) == 4.5

    def test_dstar_zero_denominator_is_infinite(self):
        assert score(SpectrumCounts(e_f=2, e_s=0, n_f=0, n_s=3), DSTAR) == math.inf

    def test_uncovered_class_scores_zero(self):
        counts = SpectrumCounts(e_f=0, e_s=0, n_f=2, n_s=3)
        for formula in (OCHIAI, BARINEL, TARANTULA, DSTAR):
            assert score(counts, formula) == 0.0

    def test_exponent_must_be_positive(self):
        with pytest.raises(ValueError):
            FormulaId(name=Formula.DSTAR, dstar_exponent=0)

    def test_matches_reference_evaluator(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            e_f, e_s, n_f, n_s = (int(v) for v in rng.integers(0, 6, size=4))
            counts = SpectrumCounts(e_f, e_s, n_f, n_s)
            for formula in (OCHIAI, BARINEL, TARANTULA, DSTAR, FormulaId(name=Formula.DSTAR, dstar_exponent=3)):
                expected = reference_score(counts, formula)
                actual = score(counts, formula)
                if math.isinf(expected):
                    assert actual == expected
                else:
                    assert abs(actual - expected) <= 1e-12

    def test_monotone_in_flaky_coverage(self):
        total_flaky = 6
        for formula in (OCHIAI, BARINEL, TARANTULA, DSTAR):
            for e_s in range(0, 4):
                for n_s in range(0, 4):
                    previous = -math.inf
                    for e_f in range(0, total_flaky + 1):
                        value = score(SpectrumCounts(e_f, e_s, total_flaky - e_f, n_s), formula)
                        assert value >= previous
                        previous = value

    def test_bounded_ranges(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            counts = SpectrumCounts(*(int(v) for v in rng.integers(1, 8, size=4)))
            for formula in (OCHIAI, BARINEL, TARANTULA):
                assert 0.0 <= score(counts, formula) <= 1.0
            assert score(counts, DSTAR) >= 0.0


class TestRankClasses:
    def test_max_tie_breaker(self):
        ranking = rank_classes({"A": 0.9, "B": 0.9, "C": 0.5})
        a, b, c = (ranking.entry(x) for x in "ABC")
        assert (a.rank, a.best_rank, a.tie_group_size) == (2, 1, 2)
        assert (b.rank, b.best_rank, b.tie_group_size) == (2, 1, 2)
        assert (c.rank, c.best_rank, c.tie_group_size) == (3, 3, 1)
        assert ranking.class_ids == ["A", "B", "C"]

    def test_distinct_scores(self):
        ranking = rank_classes({"x": 0.1, "y": 0.7, "z": 0.4})
        assert [(e.class_id, e.rank) for e in ranking] == [("y", 1), ("z", 2), ("x", 3)]

    def test_infinity_ties_with_infinity(self):
        ranking = rank_classes({"a": math.inf, "b": math.inf, "c": 10.0})
        assert ranking.entry("a").rank == 2
        assert ranking.entry("c").rank == 3

    def test_nan_rejected(self):
        with pytest.raises(InputValidationError, match="non-finite suspiciousness"):
            rank_classes({"a": float("nan"), "b": 1.0})

    def test_empty_rejected(self):
        with pytest.raises(InputValidationError):
            rank_classes({})

    def test_brute_force_with_forced_ties(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            size = int(rng.integers(1, 12))
            values = rng.integers(0, 4, size=size) / 4.0
            scores = {f"c{i}": float(v) for i, v in enumerate(values)}
            ranking = rank_classes(scores)
            for class_id, value in scores.items():
                greater = sum(1 for v in scores.values() if v > value)
                equal = sum(1 for v in scores.values() if v == value)
                entry = ranking.entry(class_id)
                assert entry.rank == greater + equal
                assert entry.best_rank == greater + 1
                assert entry.tie_group_size == entry.rank - entry.best_rank + 1

    def test_increasing_transform_keeps_ranks(self):
        rng = np.random.default_rng(4)
        scores = {f"c{i}": float(v) for i, v in enumerate(rng.integers(0, 5, size=20))}
        transformed = {c: math.exp(3 * v) + 7 for c, v in scores.items()}
        before = rank_classes(scores)
        after = rank_classes(transformed)
        for class_id in scores:
            assert before.entry(class_id).rank == after.entry(class_id).rank
            assert before.entry(class_id).tie_group_size == after.entry(class_id).tie_group_size


class TestLocalise:
    def test_planted_culprit_ranks_first(self):
        matrix = make_matrix(
            [[1, 1, 0, 0], [1, 0, 1, 0], [0, 1, 1, 1], [0, 1, 0, 1], [0, 0, 1, 1]],
            ["flaky", "flaky", "stable", "stable", "stable"],
        )
        ranking = localise(matrix, OCHIAI)
        assert ranking.entry("C1").best_rank == 1
        assert ranking.entry("C1").rank == 1

    def test_symmetric_matrix_all_tied(self):
        matrix = make_matrix([[1, 1, 1], [0, 0, 0]], ["flaky", "stable"])
        ranking = localise(matrix, OCHIAI)
        assert {e.rank for e in ranking} == {3}

    def test_composition(self):
        rng = np.random.default_rng(9)
        matrix = make_matrix(rng.random((15, 10)) < 0.4, ["flaky"] * 4 + ["stable"] * 11)
        counts = spectrum_counts(matrix)
        manual = rank_classes({c: score(k, TARANTULA) for c, k in counts.items()})
        assert localise(matrix, TARANTULA) == manual

    def test_needs_both_labels(self):
        matrix = make_matrix([[1, 0], [0, 1]], ["stable", "stable"])
        with pytest.raises(InputValidationError):
            localise(matrix, OCHIAI)

    def test_default_exponent_matches_explicit(self, small_matrix):
        explicit = FormulaId(name=Formula.DSTAR, dstar_exponent=2)
        assert suspiciousness(small_matrix, DSTAR) == suspiciousness(small_matrix, explicit)


class TestRankingFile:
    def test_infinity_serialised_as_inf(self):
        text = serialize_ranking(rank_classes({"a": math.inf, "b": 0.5}))
        lines = text.splitlines()
        assert lines[0] == "class,score,rank,best_rank,tie_group_size"
        assert lines[1] == "a,inf,1,1,1"

    def test_parse_back(self):
        ranking = rank_classes({"a": 0.25, "b": 0.25, "c": 1 / 3})
        assert parse_ranking(serialize_ranking(ranking).splitlines()) == ranking

    def test_extra_columns(self):
        ranking = rank_classes({"a": 2.0, "b": 1.0})
        text = serialize_ranking(ranking, {"votes": {"a": 2.0, "b": 1.0}})
        assert text.splitlines()[0].endswith(",votes")
        assert parse_ranking(text.splitlines()) == ranking

    def test_inconsistent_ranks_rejected(self):
        lines = ["class,score,rank,best_rank,tie_group_size", "a,1.0,2,1,1", "b,0.5,2,2,1"]
        with pytest.raises(InputValidationError, match="disagree"):
            parse_ranking(lines)
