"""
Shared fixtures for the flakeloc test-suite.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from flakeloc.localisation.coverage import CoverageMatrix, Outcome  # noqa: E402
from flakeloc.localisation.dataset import write_dataset  # noqa: E402
from flakeloc.log import configure_logging  # noqa: E402
from flakeloc.synth.generator import SignalMetric, SynthSpec, generate  # noqa: E402

TEST_CONFIG = """\
output_dir: "{output}"
seed: 7
log_level: "ERROR"
gp:
  population: 8
  generations: 2
  seeds: 2
  folds: 2
  max_depth: 5
  init_min_depth: 1
  init_max_depth: 2
voting:
  top_n: 5
  models_per_family: 2
"""


def make_matrix(rows, outcomes, class_ids=None, test_ids=None) -> CoverageMatrix:
    """Matrix from 0/1 rows and 'flaky'/'stable' labels."""
    activity = np.array(rows, dtype=bool)
    n_tests, n_classes = activity.shape
    return CoverageMatrix(
        test_ids=test_ids or [f"T{i + 1}" for i in range(n_tests)],
        class_ids=class_ids or [f"C{j + 1}" for j in range(n_classes)],
        activity=activity,
        outcome=[Outcome(o) for o in outcomes],
    )


@pytest.fixture(autouse=True, scope="session")
def quiet_logging():
    configure_logging("ERROR", force=True)


@pytest.fixture
def small_matrix() -> CoverageMatrix:
    """T1 flaky covering C1; T2 stable covering C1 and C2."""
    return make_matrix([[1, 0], [1, 1]], ["flaky", "stable"])


@pytest.fixture
def small_spec() -> SynthSpec:
    return SynthSpec(commits=6, tests=20, classes=25, flaky_fraction=0.2, bias=0.8, baseline=0.1, seed=3)


@pytest.fixture
def dataset_dir(tmp_path, small_spec) -> Path:
    """A written synthetic dataset directory."""
    directory = tmp_path / "dataset"
    write_dataset(generate(small_spec), directory)
    return directory


@pytest.fixture
def config_file(tmp_path) -> Path:
    """Small, quiet configuration for command-line runs."""
    path = tmp_path / "flakeloc.yaml"
    path.write_text(TEST_CONFIG.format(output=(tmp_path / "results").as_posix()), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def change_signal_spec() -> SynthSpec:
    """Half the commits mark the culprit only by the largest change count; flaky tests never cover it."""
    return SynthSpec(
        commits=40,
        tests=40,
        classes=80,
        bias=0.0,
        signal=1.0,
        signal_fraction=0.5,
        signal_metric=SignalMetric.CHANGES,
        seed=0,
    )
