"""
Per-class metric tables.

Three families of metrics augment spectrum scores: flakiness pattern counts,
change history and size. A table holds one family for one commit.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import structlog

from ..errors import InputValidationError

logger = structlog.get_logger(__name__)


class MetricFamily(Enum):
    """Metric families."""

    FLAKINESS = "flakiness"
    CHANGE = "change"
    SIZE = "size"


FAMILY_COLUMNS: Dict[MetricFamily, tuple] = {
    MetricFamily.FLAKINESS: ("TOPS", "ROPS", "IOPS", "UOPS", "AOPS", "COPS", "NOPS"),
    MetricFamily.CHANGE: ("changes", "age", "developers"),
    MetricFamily.SIZE: ("loc", "cc", "doi"),
}


@dataclass(frozen=True)
class MetricTable:
    """Named non-negative metrics for each class of one family."""

    family: MetricFamily
    values: Dict[str, tuple]
    columns: tuple = ()
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        family = MetricFamily(self.family)
        object.__setattr__(self, "family", family)
        expected = FAMILY_COLUMNS[family]
        columns = tuple(self.columns) or expected
        if set(columns) != set(expected) or len(columns) != len(expected):
            raise InputValidationError(
                f"{family.value} columns must be exactly {', '.join(expected)}; got {', '.join(columns)}"
            )

        # Canonical column order regardless of input order
        reorder = [columns.index(name) for name in expected]
        values: Dict[str, tuple] = {}
        for class_id, row in self.values.items():
            row = tuple(float(v) for v in row)
            if len(row) != len(expected):
                raise InputValidationError(f"class {class_id}: expected {len(expected)} values, got {len(row)}")
            for name, value in zip(columns, row):
                if not math.isfinite(value) or value < 0:
                    raise InputValidationError(f"class {class_id}: {name} must be finite and >= 0, got {value}")
            values[class_id] = tuple(row[i] for i in reorder)

        object.__setattr__(self, "columns", expected)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def class_ids(self) -> List[str]:
        return list(self.values.keys())

    def column(self, name: str) -> Dict[str, float]:
        index = self.columns.index(name)
        return {class_id: row[index] for class_id, row in self.values.items()}

    def row(self, class_id: str) -> Dict[str, float]:
        return dict(zip(self.columns, self.values[class_id]))

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "family": self.family.value,
            "columns": list(self.columns),
            "values": {class_id: list(row) for class_id, row in self.values.items()},
        }


def format_number(value: float) -> str:
    """Integers without a fractional part, other values in shortest exact form."""
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def serialize_metric_table(table: MetricTable) -> str:
    """Render a table in the metrics CSV format."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["class"] + list(table.columns))
    for class_id, row in table.values.items():
        writer.writerow([class_id] + [format_number(v) for v in row])
    return buffer.getvalue()


def write_metric_table(table: MetricTable, path: Union[str, Path]) -> None:
    """Write a metrics CSV to ``path``."""
    Path(path).write_text(serialize_metric_table(table), encoding="utf-8")


def ingest_metric_table(
    source: Union[str, Path, Iterable[str]],
    family: Union[MetricFamily, str],
) -> MetricTable:
    """Read and validate a metrics CSV for ``family``."""
    family = MetricFamily(family)
    name = "<metrics>"
    if isinstance(source, (str, Path)):
        name = str(source)
        try:
            lines: Sequence[str] = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise InputValidationError(f"cannot read metrics file: {e}", name) from e
    else:
        lines = list(source)

    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputValidationError("empty metrics file", name) from None

    expected = FAMILY_COLUMNS[family]
    if not header or header[0] != "class":
        raise InputValidationError("header must start with 'class'", name)
    columns = header[1:]
    missing = [c for c in expected if c not in columns]
    extra = [c for c in columns if c not in expected]
    if missing or extra or len(columns) != len(set(columns)):
        parts = []
        if missing:
            parts.append(f"missing columns {', '.join(missing)}")
        if extra:
            parts.append(f"extra columns {', '.join(extra)}")
        if not parts:
            parts.append("duplicate columns")
        raise InputValidationError(f"{family.value} table: {'; '.join(parts)}", name)

    values: Dict[str, tuple] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        where = f"{name}:{line_no}"
        if len(row) != len(header):
            raise InputValidationError(f"expected {len(header)} cells, got {len(row)}", where)
        class_id = row[0].strip()
        if class_id in values:
            raise InputValidationError(f"duplicate class id {class_id!r}", where)
        parsed = []
        for column, cell in zip(columns, row[1:]):
            try:
                number = float(cell)
            except ValueError:
                raise InputValidationError(f"non-numeric value {cell!r} for {column}", where) from None
            if not math.isfinite(number) or number < 0:
                raise InputValidationError(f"negative or non-finite value {cell!r} for {column}", where)
            parsed.append(number)
        values[class_id] = tuple(parsed)

    return MetricTable(family=family, values=values, columns=tuple(columns))


def merge_tables(scanned: MetricTable, ingested: MetricTable) -> MetricTable:
    """Ingested rows override scanner rows of the same family."""
    if scanned.family is not ingested.family:
        raise InputValidationError(
            f"cannot merge {scanned.family.value} and {ingested.family.value} tables"
        )
    values = dict(scanned.values)
    values.update(ingested.values)
    return MetricTable(family=scanned.family, values=values, warnings=scanned.warnings + ingested.warnings)


def table_for_classes(table: MetricTable, class_ids: Sequence[str]) -> Mapping[str, tuple]:
    """Rows for ``class_ids`` in that order; absent classes get zeros."""
    zeros = tuple(0.0 for _ in table.columns)
    absent = [c for c in class_ids if c not in table.values]
    if absent:
        logger.warning(
            "metric_rows_missing",
            family=table.family.value,
            count=len(absent),
            first=absent[0],
        )
    return {c: table.values.get(c, zeros) for c in class_ids}
