"""
flakeloc Metrics Module

Per-class flakiness, change and size metric tables, their sources
(commit history, source scanning, CSV ingestion) and feature frames.
"""

from .tables import FAMILY_COLUMNS, MetricFamily, MetricTable, ingest_metric_table
from .change import CommitLog, CommitRecord, FileChange, FileStatus, extract_change_metrics
from .scanner import DEFAULT_CATALOG, PatternCatalog, scan_flakiness_metrics, scan_size_metrics

__all__ = [
    "FAMILY_COLUMNS",
    "MetricFamily",
    "MetricTable",
    "ingest_metric_table",
    "CommitLog",
    "CommitRecord",
    "FileChange",
    "FileStatus",
    "extract_change_metrics",
    "DEFAULT_CATALOG",
    "PatternCatalog",
    "scan_flakiness_metrics",
    "scan_size_metrics",
]
