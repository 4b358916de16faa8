#!/usr/bin/env python3
"""
Metric table, change history, source scanner and feature frame tests.
"""

import math
import random

import numpy as np
import pytest

from conftest import make_matrix
from flakeloc.errors import InputValidationError
from flakeloc.localisation.dataset import LocalisationProblem
from flakeloc.metrics.change import (
    CommitLog,
    CommitRecord,
    FileChange,
    FileStatus,
    extract_change_metrics,
    parse_commit_log,
    write_commit_log,
)
from flakeloc.metrics.features import (
    FeatureFrame,
    FeatureSet,
    build_features,
    feature_names,
    frame_from_tables,
    normalize,
    normalize_column,
)
from flakeloc.metrics.scanner import (
    DEFAULT_CATALOG,
    PatternCatalog,
    SourceScanner,
    discover_class_paths,
    lex_source,
    parse_catalog,
    read_class_paths,
    scan_flakiness_metrics,
    scan_size_metrics,
    write_class_paths,
)
from flakeloc.metrics.tables import (
    MetricFamily,
    MetricTable,
    ingest_metric_table,
    merge_tables,
    serialize_metric_table,
    write_metric_table,
)

DAY = 86400

COUNTER_JAVA = """\
package demo;

/* Helper
   with a block comment */
public class Counter {
    // count things
    public int count(int a, int b) {
        int total = 0;
        if (a > 0 && b > 0) {
            total += a;
        }
        if (b > 0) { total += b; }
        for (int i = 0; i < a; i++) {
            total++;
        }
        return total;
    }
}
"""

WORKER_JAVA = """\
package demo;

// Thread.sleep(100) in a comment is ignored
public class Worker extends Base {
    private final String label = "Thread.sleep";

    public void run(int n) throws Exception {
        Thread.sleep(5);
        java.lang.Thread.sleep(n);
    }
}
"""

BASE_JAVA = """\
package demo;

public class Base extends Root {
}
"""


def write_sources(root, files):
    for relative, text in files.items():
        path = root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return root


def commit(hash, timestamp, author, *files):
    return CommitRecord(hash=hash, timestamp=timestamp, author=author, files=tuple(files))


class TestMetricTables:
    def test_ingest_valid_change_table(self):
        table = ingest_metric_table(
            ["class,changes,age,developers", "a.A,3,2.5,2", "a.B,0,0,0", "a.C,1,10,1"],
            MetricFamily.CHANGE,
        )
        assert len(table.values) == 3
        assert table.row("a.A") == {"changes": 3.0, "age": 2.5, "developers": 2.0}

    def test_columns_reordered_canonically(self):
        table = ingest_metric_table(["class,age,developers,changes", "a.A,2.5,2,3"], "change")
        assert table.columns == ("changes", "age", "developers")
        assert table.values["a.A"] == (3.0, 2.5, 2.0)

    def test_missing_column(self):
        with pytest.raises(InputValidationError, match="missing columns doi"):
            ingest_metric_table(["class,loc,cc", "a.A,10,2"], MetricFamily.SIZE)

    def test_extra_column(self):
        with pytest.raises(InputValidationError, match="extra columns"):
            ingest_metric_table(["class,loc,cc,doi,wmc", "a.A,10,2,1,4"], MetricFamily.SIZE)

    @pytest.mark.parametrize("cell", ["-1", "abc", "inf"])
    def test_bad_values(self, cell):
        with pytest.raises(InputValidationError):
            ingest_metric_table(["class,loc,cc,doi", f"a.A,{cell},2,1"], MetricFamily.SIZE)

    def test_round_trip(self, tmp_path):
        table = MetricTable(
            family=MetricFamily.SIZE,
            values={"a.A": (12, 3, 1), "a.B": (0, 1, 2)},
        )
        path = tmp_path / "size.csv"
        write_metric_table(table, path)
        assert path.read_text(encoding="utf-8").splitlines()[1] == "a.A,12,3,1"
        assert ingest_metric_table(path, MetricFamily.SIZE) == table

    def test_ingested_rows_override_scanned(self):
        scanned = MetricTable(family="size", values={"a.A": (10, 2, 1), "a.B": (5, 1, 1)})
        ingested = MetricTable(family="size", values={"a.A": (99, 9, 3)})
        merged = merge_tables(scanned, ingested)
        assert merged.values == {"a.A": (99.0, 9.0, 3.0), "a.B": (5.0, 1.0, 1.0)}

    def test_merge_rejects_other_family(self):
        size = MetricTable(family="size", values={})
        change = MetricTable(family="change", values={})
        with pytest.raises(InputValidationError):
            merge_tables(size, change)


class TestChangeMetrics:
    def test_counts_and_age(self):
        t = 1_600_000_000
        log = CommitLog(
            [
                commit("h1", t - 100, "a", FileChange("src/F.java", "added")),
                commit("h2", t - 50, "b", FileChange("src/F.java", "modified")),
                commit("h3", t, "a", FileChange("src/F.java", "modified")),
                commit("h4", t, "c", FileChange("src/Other.java", "modified")),
            ]
        )
        table = extract_change_metrics(log, {"demo.F": "src/F.java"}, t + 2 * DAY)
        assert table.row("demo.F") == {"changes": 3.0, "age": 2.0, "developers": 2.0}

    def test_follows_renames_backwards(self):
        log = CommitLog(
            [
                commit("h1", 50, "x", FileChange("G.java", "added")),
                commit("h2", 100, "x", FileChange("G.java", "modified")),
                commit("h3", 200, "y", FileChange("F.java", "renamed", old_path="G.java")),
                commit("h4", 300, "z", FileChange("F.java", "modified")),
                # A new, unrelated G.java after the rename
                commit("h5", 400, "w", FileChange("G.java", "added")),
            ]
        )
        table = extract_change_metrics(log, {"F": "F.java"}, 400)
        assert table.row("F")["changes"] == 4.0
        assert table.row("F")["developers"] == 3.0

    def test_empty_log(self):
        table = extract_change_metrics(CommitLog([]), {"a.A": "A.java", "a.B": "B.java"}, 0)
        assert table.values == {"a.A": (0.0, 0.0, 0.0), "a.B": (0.0, 0.0, 0.0)}
        assert len(table.warnings) == 2

    def test_order_insensitive(self):
        records = [
            commit(f"h{i}", 100 * i, f"dev{i % 3}", FileChange("A.java", "modified"))
            for i in range(1, 8)
        ]
        records.append(commit("r", 900, "dev9", FileChange("B.java", "renamed", old_path="A.java")))
        paths = {"B": "B.java", "A": "A.java"}
        expected = extract_change_metrics(CommitLog(records), paths, 1000)
        shuffled = list(records)
        random.Random(4).shuffle(shuffled)
        assert extract_change_metrics(CommitLog(shuffled), paths, 1000) == expected

    def test_analysis_time_before_commit(self):
        log = CommitLog([commit("h1", 500, "a", FileChange("A.java", "added"))])
        with pytest.raises(InputValidationError, match="precedes"):
            extract_change_metrics(log, {"A": "A.java"}, 100)

    def test_duplicate_hash(self):
        with pytest.raises(InputValidationError, match="duplicate commit hash"):
            CommitLog([commit("h", 1, "a"), commit("h", 2, "b")])

    def test_rename_needs_old_path(self):
        with pytest.raises(InputValidationError):
            FileChange("F.java", FileStatus.RENAMED)

    def test_log_file_round_trip(self, tmp_path):
        log = CommitLog(
            [
                commit("h1", 10, "a", FileChange("A.java", "added")),
                commit("h2", 20, "b", FileChange("B.java", "renamed", old_path="A.java")),
            ]
        )
        path = tmp_path / "log.jsonl"
        write_commit_log(log, path)
        assert parse_commit_log(path) == log

    def test_log_error_names_line(self):
        with pytest.raises(InputValidationError, match="<commit log>:2"):
            parse_commit_log(['{"hash":"a","timestamp":1,"author":"x","files":[]}', "{not json"])


class TestSourceScanner:
    def test_size_of_counter(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Counter.java": COUNTER_JAVA})
        table = scan_size_metrics(root)
        assert table.row("demo.Counter") == {"loc": 14.0, "cc": 5.0, "doi": 1.0}

    def test_text_block_lines_count(self, tmp_path):
        source = (
            "package demo;\n"
            "public class Banner {\n"
            '  String text = """\n'
            "      first\n"
            "\n"
            "      second\n"
            '      """;\n'
            "}\n"
        )
        root = write_sources(tmp_path / "src", {"demo/Banner.java": source})
        assert lex_source(root / "demo" / "Banner.java").loc == 7

    def test_empty_file(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Empty.java": ""})
        assert scan_size_metrics(root).row("demo.Empty") == {"loc": 0.0, "cc": 1.0, "doi": 1.0}

    def test_inheritance_chain(self, tmp_path):
        root = write_sources(
            tmp_path / "src",
            {
                "p/A.java": "package p;\npublic class A extends B {\n}\n",
                "p/B.java": "package p;\npublic class B extends C {\n}\n",
                "p/C.java": "package p;\npublic class C {\n}\n",
            },
        )
        table = scan_size_metrics(root)
        assert table.column("doi") == {"p.A": 3.0, "p.B": 2.0, "p.C": 1.0}

    def test_inheritance_resolves_outside_requested_classes(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Worker.java": WORKER_JAVA, "demo/Base.java": BASE_JAVA})
        table = scan_size_metrics(root, {"demo.Worker": "demo/Worker.java"})
        assert table.class_ids == ["demo.Worker"]
        assert table.row("demo.Worker")["doi"] == 2.0

    def test_flakiness_skips_comments_and_strings(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Worker.java": WORKER_JAVA, "demo/Counter.java": COUNTER_JAVA})
        table = scan_flakiness_metrics(root)
        worker = table.row("demo.Worker")
        assert worker["AOPS"] == 2.0
        assert sum(worker.values()) == 2.0
        assert set(table.row("demo.Counter").values()) == {0.0}

    def test_catalog_patterns_respect_identifier_boundaries(self):
        assert DEFAULT_CATALOG.count("AOPS", "x.await(1); obj.wait(2);") == 2
        assert DEFAULT_CATALOG.count("UOPS", "new ConcurrentHashMap<>()") == 0
        assert DEFAULT_CATALOG.count("COPS", "new ConcurrentHashMap<>()") == 1

    def test_lexed_header(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Worker.java": WORKER_JAVA})
        lexed = lex_source(root / "demo" / "Worker.java")
        assert lexed.declared_class == "Worker"
        assert lexed.superclass == "Base"
        assert "Thread.sleep" not in lexed.code_text.split("run", 1)[0]

    def test_unreadable_file_named(self, tmp_path):
        root = tmp_path / "src"
        (root / "demo").mkdir(parents=True)
        bad = root / "demo" / "Bad.java"
        bad.write_bytes(b"\xff\xfe\xfa class")
        with pytest.raises(InputValidationError) as info:
            scan_size_metrics(root, {"demo.Bad": "demo/Bad.java"})
        assert str(bad) in str(info.value)

    def test_missing_class_file(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Counter.java": COUNTER_JAVA})
        with pytest.raises(InputValidationError, match="does not exist"):
            scan_size_metrics(root, {"demo.Gone": "demo/Gone.java"})

    def test_deterministic_and_parallel(self, tmp_path):
        root = write_sources(
            tmp_path / "src",
            {"demo/Worker.java": WORKER_JAVA, "demo/Base.java": BASE_JAVA, "demo/Counter.java": COUNTER_JAVA},
        )
        first = SourceScanner(root)
        second = SourceScanner(root, workers=4)
        assert first.size_metrics() == second.size_metrics()
        assert first.flakiness_metrics() == second.flakiness_metrics()

    def test_scanned_table_reingests_equal(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Counter.java": COUNTER_JAVA, "demo/Worker.java": WORKER_JAVA})
        table = scan_flakiness_metrics(root)
        lines = serialize_metric_table(table).splitlines()
        assert ingest_metric_table(lines, MetricFamily.FLAKINESS) == table

    def test_class_paths_file(self, tmp_path):
        root = write_sources(tmp_path / "src", {"demo/Counter.java": COUNTER_JAVA, "Top.java": "class Top {}\n"})
        mapping = discover_class_paths(root)
        assert mapping == {"Top": "Top.java", "demo.Counter": "demo/Counter.java"}
        path = tmp_path / "class_paths.csv"
        write_class_paths(mapping, path)
        assert read_class_paths(path) == mapping


class TestPatternCatalog:
    def test_shipped_catalog_matches_default(self):
        from pathlib import Path

        shipped = Path(__file__).parent.parent / "config" / "patterns.txt"
        assert parse_catalog(shipped) == DEFAULT_CATALOG

    def test_text_round_trip(self):
        assert parse_catalog(DEFAULT_CATALOG.to_text().splitlines()) == DEFAULT_CATALOG

    def test_every_metric_needs_a_pattern(self):
        patterns = {k: v for k, v in DEFAULT_CATALOG.patterns.items() if k != "NOPS"}
        with pytest.raises(InputValidationError, match="NOPS"):
            PatternCatalog(patterns)

    def test_unknown_metric(self):
        with pytest.raises(InputValidationError, match="unknown flakiness metrics"):
            parse_catalog(DEFAULT_CATALOG.to_text().splitlines() + ["XOPS: foo"])


class TestNormalisation:
    def test_endpoints(self):
        assert normalize_column([2, 4, 6]).tolist() == [0.0, 0.5, 1.0]

    def test_constant_column(self):
        assert normalize_column([5, 5, 5]).tolist() == [0.0, 0.0, 0.0]

    def test_infinity_takes_finite_max(self):
        assert normalize_column([1.0, math.inf, 3.0]).tolist() == [0.0, 1.0, 1.0]

    def test_all_infinite(self):
        assert normalize_column([math.inf, math.inf]).tolist() == [0.0, 0.0]

    def test_nan_rejected(self):
        with pytest.raises(InputValidationError):
            normalize_column([1.0, float("nan")])

    def test_random_columns(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            column = rng.normal(size=int(rng.integers(2, 30))) * 10
            out = normalize_column(column)
            assert out.min() == 0.0
            assert out.max() == 1.0

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        frame = FeatureFrame(
            class_ids=[f"c{i}" for i in range(10)],
            columns={"a": rng.random(10) * 5, "b": np.full(10, 2.0), "c": rng.integers(0, 3, 10)},
        )
        once = normalize(frame)
        twice = normalize(once)
        for name in frame.names:
            assert np.allclose(once.column(name), twice.column(name), rtol=0, atol=1e-15)


class TestFeatureFrames:
    @pytest.fixture
    def problem(self):
        matrix = make_matrix([[1, 0, 1], [1, 1, 0], [0, 1, 1]], ["flaky", "stable", "stable"])
        change = MetricTable(
            family="change",
            values={"C1": (4, 1.0, 2), "C2": (2, 3.0, 1)},
        )
        return LocalisationProblem(commit_id="k1", matrix=matrix, metrics={MetricFamily.CHANGE: change})

    def test_feature_names(self):
        assert feature_names(FeatureSet.SBFL) == ("ochiai", "barinel", "tarantula", "dstar")
        assert feature_names(FeatureSet.SBFL_SIZE)[4:] == ("loc", "cc", "doi")
        assert len(feature_names(FeatureSet.SBFL_FLAKINESS)) == 11

    def test_absent_rows_are_zero(self, problem):
        frame = frame_from_tables(problem.matrix, problem.metrics, FeatureSet.SBFL_CHANGE)
        assert frame.column("changes").tolist() == [4.0, 2.0, 0.0]
        assert frame.names == list(feature_names(FeatureSet.SBFL_CHANGE))

    def test_built_features_are_normalised(self, problem):
        frame = build_features(problem, FeatureSet.SBFL_CHANGE)
        assert frame.column("changes").tolist() == [1.0, 0.5, 0.0]
        for name in frame.names:
            assert 0.0 <= frame.column(name).min() and frame.column(name).max() <= 1.0

    def test_missing_family(self, problem):
        with pytest.raises(InputValidationError, match="needs the size metrics table"):
            build_features(problem, FeatureSet.SBFL_SIZE)

    def test_frame_shape_checked(self):
        with pytest.raises(InputValidationError):
            FeatureFrame(class_ids=["a", "b"], columns={"x": [1.0]})
