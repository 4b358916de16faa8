#!/usr/bin/env python3
"""
Coverage matrix parsing and spectrum count tests.
"""

import numpy as np
import pytest

from conftest import make_matrix
from flakeloc.errors import InputValidationError
from flakeloc.localisation.coverage import (
    CoverageMatrix,
    Outcome,
    SpectrumCounts,
    covered_by_flaky,
    parse_coverage,
    serialize_coverage,
    spectrum_counts,
    write_coverage,
)


def random_matrix(rng, n_tests, n_classes) -> CoverageMatrix:
    outcomes = ["flaky", "stable"] + [rng.choice(["flaky", "stable"]) for _ in range(n_tests - 2)]
    return make_matrix(rng.random((n_tests, n_classes)) < 0.3, outcomes)


class TestParseCoverage:
    def test_small_file(self):
        matrix = parse_coverage(["test,outcome,C1,C2", "T1,flaky,1,0", "T2,stable,1,1"])
        assert matrix.test_ids == ("T1", "T2")
        assert matrix.class_ids == ("C1", "C2")
        assert matrix.outcome == (Outcome.FLAKY, Outcome.STABLE)
        assert matrix.activity.tolist() == [[True, False], [True, True]]

    def test_unknown_outcome(self):
        with pytest.raises(InputValidationError, match="unknown outcome label"):
            parse_coverage(["test,outcome,C1", "T1,failing,1"])

    @pytest.mark.parametrize(
        "lines, message",
        [
            (["test,outcome,C1", "T1,flaky,1", "T1,stable,0"], "duplicate test id"),
            (["test,outcome,C1,C1", "T1,flaky,1,0"], "duplicate class id"),
            (["test,outcome,C1", "T1,flaky,2"], "malformed cell"),
            (["test,outcome,C1,C2", "T1,flaky,1"], "ragged row"),
            (["class,outcome,C1"], "header must start"),
            ([], "empty coverage file"),
        ],
    )
    def test_rejects_malformed_input(self, lines, message):
        with pytest.raises(InputValidationError, match=message):
            parse_coverage(lines)

    def test_error_names_line(self, tmp_path):
        path = tmp_path / "coverage.csv"
        path.write_text("test,outcome,C1\nT1,flaky,1\nT2,stable,x\n", encoding="utf-8")
        with pytest.raises(InputValidationError) as info:
            parse_coverage(path)
        assert f"{path}:3" in str(info.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputValidationError, match="cannot read coverage file"):
            parse_coverage(tmp_path / "absent.csv")

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        matrix = random_matrix(rng, 100, 50)
        path = tmp_path / "coverage.csv"
        write_coverage(matrix, path)
        again = parse_coverage(path)
        assert again == matrix
        assert serialize_coverage(again) == path.read_text(encoding="utf-8")

    def test_activity_is_read_only(self, small_matrix):
        with pytest.raises(ValueError):
            small_matrix.activity[0, 0] = False

    def test_shape_mismatch(self):
        with pytest.raises(InputValidationError, match="does not match"):
            CoverageMatrix(test_ids=["T1"], class_ids=["C1", "C2"], activity=[[True]], outcome=["flaky"])


class TestSpectrumCounts:
    def test_small_matrix(self, small_matrix):
        counts = spectrum_counts(small_matrix)
        assert counts["C1"] == SpectrumCounts(e_f=1, e_s=1, n_f=0, n_s=0)
        assert counts["C2"] == SpectrumCounts(e_f=0, e_s=1, n_f=1, n_s=0)

    def test_uncovered_class(self):
        matrix = make_matrix([[1, 0], [0, 0], [1, 0]], ["flaky", "stable", "stable"])
        assert spectrum_counts(matrix)["C2"] == SpectrumCounts(e_f=0, e_s=0, n_f=1, n_s=2)

    def test_brute_force_recount(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            matrix = random_matrix(rng, 20, 15)
            counts = spectrum_counts(matrix)
            for j, class_id in enumerate(matrix.class_ids):
                e_f = e_s = n_f = n_s = 0
                for i, outcome in enumerate(matrix.outcome):
                    hit = bool(matrix.activity[i, j])
                    if outcome is Outcome.FLAKY:
                        e_f += hit
                        n_f += not hit
                    else:
                        e_s += hit
                        n_s += not hit
                assert counts[class_id] == SpectrumCounts(e_f, e_s, n_f, n_s)
                assert counts[class_id].total_flaky == matrix.n_flaky
                assert counts[class_id].total_stable == matrix.n_stable

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(8)
        matrix = random_matrix(rng, 12, 6)
        order = rng.permutation(12)
        shuffled = CoverageMatrix(
            test_ids=[matrix.test_ids[i] for i in order],
            class_ids=matrix.class_ids,
            activity=matrix.activity[order],
            outcome=[matrix.outcome[i] for i in order],
        )
        assert spectrum_counts(shuffled) == spectrum_counts(matrix)

    def test_negative_counts_rejected(self):
        with pytest.raises(InputValidationError):
            SpectrumCounts(e_f=-1, e_s=0, n_f=0, n_s=0)


class TestCoveredByFlaky:
    def test_small_matrix(self, small_matrix):
        assert covered_by_flaky(small_matrix) == {"C1"}

    def test_nothing_covered(self):
        matrix = make_matrix([[0, 0], [1, 1]], ["flaky", "stable"])
        assert covered_by_flaky(matrix) == set()

    def test_agrees_with_counts(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            matrix = random_matrix(rng, 15, 10)
            counts = spectrum_counts(matrix)
            assert covered_by_flaky(matrix) == {c for c, k in counts.items() if k.e_f > 0}

    def test_require_both_labels(self):
        matrix = make_matrix([[1], [0]], ["flaky", "flaky"])
        with pytest.raises(InputValidationError, match="at least one flaky and one stable"):
            matrix.require_both_labels()
