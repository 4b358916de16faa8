"""
flakeloc Synthetic Data Module

Datasets with planted culprit classes for benchmarking and acceptance runs.
"""

from .generator import SignalMetric, SynthSpec, generate, write_synthetic

__all__ = ["SignalMetric", "SynthSpec", "generate", "write_synthetic"]
