"""
Lightweight source scanning for size and flakiness metrics.

Files are lexed with pygments so comments and string literals can be left
out; no syntax tree or call graph is built. Counts are direct textual
occurrences inside each class file.
"""

import csv
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import structlog
from pygments.lexers import JavaLexer, get_lexer_for_filename
from pygments.token import Comment, Keyword, Name, Operator, String
from pygments.util import ClassNotFound

from ..errors import InputValidationError
from .tables import FAMILY_COLUMNS, MetricFamily, MetricTable

logger = structlog.get_logger(__name__)

DEFAULT_SUFFIXES = (".java",)
BRANCH_KEYWORDS = frozenset({"if", "for", "while", "case", "catch"})
BRANCH_OPERATORS = ("&&", "||", "?")

DEFAULT_PATTERNS: Dict[str, Tuple[str, ...]] = {
    "TOPS": ("System.currentTimeMillis", "System.nanoTime", "new Date"),
    "ROPS": ("random(", "Random("),
    "IOPS": ("File(", "FileInputStream", "FileOutputStream", "Files."),
    "UOPS": ("HashMap", "HashSet"),
    "AOPS": ("Thread.sleep", "wait(", "await(", "Future"),
    "COPS": ("Thread(", "synchronized", "ConcurrentHashMap", "ExecutorService"),
    "NOPS": ("Socket", "HttpURLConnection", "URL("),
}


def _pattern_regex(pattern: str) -> "re.Pattern[str]":
    # An identifier-led pattern must not continue a longer identifier
    prefix = r"(?<![\w$])" if re.match(r"[\w$]", pattern) else ""
    return re.compile(prefix + re.escape(pattern))


@dataclass(frozen=True)
class PatternCatalog:
    """Textual patterns counted for each flakiness metric."""

    patterns: Dict[str, tuple]

    def __post_init__(self):
        expected = FAMILY_COLUMNS[MetricFamily.FLAKINESS]
        unknown = sorted(set(self.patterns) - set(expected))
        if unknown:
            raise InputValidationError(f"unknown flakiness metrics in catalog: {', '.join(unknown)}")
        normalised: Dict[str, tuple] = {}
        for metric in expected:
            entries = tuple(p for p in self.patterns.get(metric, ()) if p)
            if not entries:
                raise InputValidationError(f"catalog has no pattern for {metric}")
            normalised[metric] = entries
        object.__setattr__(self, "patterns", normalised)
        object.__setattr__(
            self,
            "_matchers",
            {metric: [_pattern_regex(p) for p in entries] for metric, entries in normalised.items()},
        )

    def count(self, metric: str, text: str) -> int:
        """Occurrences of the patterns of ``metric`` in ``text``."""
        return sum(len(regex.findall(text)) for regex in self._matchers[metric])

    def to_text(self) -> str:
        """Render in the ``metric: pattern`` catalog format."""
        lines = []
        for metric, entries in self.patterns.items():
            lines.append(f"# {metric}")
            lines.extend(f"{metric}: {pattern}" for pattern in entries)
        return "\n".join(lines) + "\n"


DEFAULT_CATALOG = PatternCatalog(DEFAULT_PATTERNS)


def parse_catalog(source: Union[str, Path, Iterable[str]]) -> PatternCatalog:
    """Read a catalog of ``metric: pattern`` lines; ``#`` starts a comment line."""
    name = "<catalog>"
    if isinstance(source, (str, Path)):
        name = str(source)
        try:
            lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise InputValidationError(f"cannot read catalog: {e}", name) from e
    else:
        lines = source

    patterns: Dict[str, List[str]] = {}
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        metric, sep, pattern = stripped.partition(":")
        pattern = pattern.strip()
        if not sep or not pattern:
            raise InputValidationError("expected 'metric: pattern'", f"{name}:{line_no}")
        patterns.setdefault(metric.strip(), []).append(pattern)
    try:
        return PatternCatalog({k: tuple(v) for k, v in patterns.items()})
    except InputValidationError as e:
        raise InputValidationError(str(e), name) from None


@dataclass(frozen=True)
class LexedSource:
    """Per-file scan results that do not depend on other files."""

    path: str
    loc: int
    branches: int
    code_text: str
    declared_class: Optional[str]
    superclass: Optional[str]


def _lexer_for(path: Path):
    try:
        return get_lexer_for_filename(str(path), stripnl=False, ensurenl=False)
    except ClassNotFound:
        return JavaLexer(stripnl=False, ensurenl=False)


def lex_source(path: Union[str, Path]) -> LexedSource:
    """Lex one file and collect the counts the scanners need."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="strict")
    except (OSError, UnicodeDecodeError) as e:
        raise InputValidationError(f"unreadable source file: {e}", str(path)) from e

    tokens = list(_lexer_for(path).get_tokens(text))

    code_lines = set()
    line = 0
    branches = 0
    operator_run: List[str] = []
    code_parts: List[str] = []

    def flush_operators() -> int:
        run = "".join(operator_run)
        operator_run.clear()
        return sum(run.count(op) for op in BRANCH_OPERATORS)

    for ttype, value in tokens:
        is_comment = ttype in Comment
        is_string = ttype in String
        # A token such as a text block may span lines; each non-blank one counts
        if not is_comment:
            for offset, segment in enumerate(value.split("\n")):
                if segment.strip():
                    code_lines.add(line + offset)

        if ttype in Operator:
            operator_run.append(value)
        else:
            branches += flush_operators()
            if ttype in Keyword and value in BRANCH_KEYWORDS:
                branches += 1

        # Comments and literals are blanked but keep their line breaks
        if is_comment or is_string:
            code_parts.append(" " + "\n" * value.count("\n"))
        else:
            code_parts.append(value)
        line += value.count("\n")
    branches += flush_operators()

    declared, superclass = _class_header(tokens)
    return LexedSource(
        path=str(path),
        loc=len(code_lines),
        branches=branches,
        code_text="".join(code_parts),
        declared_class=declared,
        superclass=superclass,
    )


def _class_header(tokens: Sequence[Tuple[object, str]]) -> Tuple[Optional[str], Optional[str]]:
    """Name of the first declared class and the simple name it extends."""
    significant = [(t, v) for t, v in tokens if v.strip() and t not in Comment]
    for i, (ttype, value) in enumerate(significant):
        if ttype in Keyword and value == "class":
            break
    else:
        return None, None

    declared = None
    depth = 0
    for j in range(i + 1, len(significant)):
        ttype, value = significant[j]
        if declared is None and ttype in Name:
            declared = value
            continue
        if value == "{":
            return declared, None
        if ttype in Operator:
            depth += value.count("<") - value.count(">")
            continue
        if depth == 0 and ttype in Keyword and value == "extends":
            parts: List[str] = []
            for ttype2, value2 in significant[j + 1:]:
                if ttype2 in Name:
                    parts.append(value2)
                elif value2 == ".":
                    continue
                else:
                    break
            return declared, (parts[-1] if parts else None)
    return declared, None


def discover_class_paths(
    source_root: Union[str, Path],
    suffixes: Sequence[str] = DEFAULT_SUFFIXES,
) -> Dict[str, str]:
    """Map dotted class ids to paths relative to ``source_root``."""
    root = Path(source_root)
    if not root.is_dir():
        raise InputValidationError("source root is not a directory", str(root))
    found: Dict[str, str] = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix in suffixes:
            relative = path.relative_to(root)
            class_id = ".".join(relative.with_suffix("").parts)
            found[class_id] = relative.as_posix()
    return found


def read_class_paths(path: Union[str, Path]) -> Dict[str, str]:
    """Read a ``class,path`` CSV."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not {"class", "path"} <= set(reader.fieldnames):
                raise InputValidationError("class-path file needs 'class,path' header", str(path))
            mapping: Dict[str, str] = {}
            for row in reader:
                class_id = row["class"].strip()
                if class_id in mapping:
                    raise InputValidationError(f"duplicate class id {class_id!r}", str(path))
                mapping[class_id] = row["path"].strip()
            return mapping
    except OSError as e:
        raise InputValidationError(f"cannot read class-path file: {e}", str(path)) from e


def write_class_paths(class_paths: Mapping[str, str], path: Union[str, Path]) -> None:
    """Write a ``class,path`` CSV."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["class", "path"])
        for class_id, class_path in class_paths.items():
            writer.writerow([class_id, class_path])


class SourceScanner:
    """Lexes the files of a source tree once and derives both metric families."""

    def __init__(
        self,
        source_root: Union[str, Path],
        class_paths: Optional[Mapping[str, str]] = None,
        workers: int = 1,
    ):
        self.source_root = Path(source_root)
        self.class_paths = dict(class_paths) if class_paths is not None else discover_class_paths(source_root)
        self.workers = max(1, workers)
        self.logger = structlog.get_logger(__name__)
        self._lexed: Dict[str, LexedSource] = {}

    def _lex_all(self) -> Dict[str, LexedSource]:
        if self._lexed or not self.class_paths:
            return self._lexed

        # Inheritance may resolve through files outside the requested classes
        tree_paths = discover_class_paths(self.source_root) if self.source_root.is_dir() else {}
        every = dict(tree_paths)
        every.update(self.class_paths)
        class_ids = list(every.keys())
        files = [self.source_root / every[c] for c in class_ids]

        missing = [str(f) for c, f in zip(class_ids, files) if c in self.class_paths and not f.is_file()]
        if missing:
            raise InputValidationError("class file does not exist", missing[0])

        requested = set(self.class_paths)

        def lex(item: Tuple[str, Path]) -> Optional[LexedSource]:
            class_id, path = item
            try:
                return lex_source(path)
            except InputValidationError:
                if class_id in requested:
                    raise
                self.logger.warning("source_skipped", path=str(path))
                return None

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            results = list(pool.map(lex, zip(class_ids, files)))
        self._lexed = {c: r for c, r in zip(class_ids, results) if r is not None}
        self.logger.info("sources_scanned", root=str(self.source_root), files=len(files))
        return self._lexed

    @staticmethod
    def _by_simple_name(lexed: Mapping[str, LexedSource]) -> Dict[str, List[str]]:
        by_name: Dict[str, List[str]] = {}
        for cid, source in lexed.items():
            name = source.declared_class or cid.rsplit(".", 1)[-1]
            by_name.setdefault(name, []).append(cid)
        return by_name

    @staticmethod
    def _depth_of_inheritance(
        class_id: str,
        lexed: Mapping[str, LexedSource],
        by_name: Mapping[str, List[str]],
    ) -> int:
        depth = 1
        visited = {class_id}
        current = class_id
        while True:
            parent_name = lexed[current].superclass
            candidates = by_name.get(parent_name or "", [])
            if not candidates:
                return depth
            package = current.rsplit(".", 1)[0] if "." in current else ""
            same_package = [c for c in candidates if c.rsplit(".", 1)[0] == package]
            parent = sorted(same_package or candidates)[0]
            if parent in visited:
                return depth
            visited.add(parent)
            depth += 1
            current = parent

    def size_metrics(self) -> MetricTable:
        """loc, cc and doi for every requested class."""
        lexed = self._lex_all()
        by_name = self._by_simple_name(lexed)
        values = {
            class_id: (
                float(lexed[class_id].loc),
                float(1 + lexed[class_id].branches),
                float(self._depth_of_inheritance(class_id, lexed, by_name)),
            )
            for class_id in self.class_paths
        }
        return MetricTable(family=MetricFamily.SIZE, values=values, columns=("loc", "cc", "doi"))

    def flakiness_metrics(self, catalog: PatternCatalog = DEFAULT_CATALOG) -> MetricTable:
        """Pattern occurrence counts for every requested class."""
        lexed = self._lex_all()
        columns = FAMILY_COLUMNS[MetricFamily.FLAKINESS]
        values = {}
        for class_id in self.class_paths:
            text = lexed[class_id].code_text
            values[class_id] = tuple(
                float(catalog.count(metric, text))
                for metric in columns
            )
        return MetricTable(family=MetricFamily.FLAKINESS, values=values, columns=columns)


def scan_size_metrics(
    source_root: Union[str, Path],
    class_paths: Optional[Mapping[str, str]] = None,
    workers: int = 1,
) -> MetricTable:
    """Size table for the classes under ``source_root``."""
    return SourceScanner(source_root, class_paths, workers).size_metrics()


def scan_flakiness_metrics(
    source_root: Union[str, Path],
    class_paths: Optional[Mapping[str, str]] = None,
    catalog: PatternCatalog = DEFAULT_CATALOG,
    workers: int = 1,
) -> MetricTable:
    """Flakiness table for the classes under ``source_root``."""
    return SourceScanner(source_root, class_paths, workers).flakiness_metrics(catalog)
