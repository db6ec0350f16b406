import numpy as np
import pytest

from qkmeans.datagen import Dataset, GroundTruth

# acceptance criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def make_dataset(points, labels, K=None):
    points = np.asarray(points, dtype=np.float64)
    truth = GroundTruth.from_labels(points, labels, K)
    return Dataset(points=points, truth=truth)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
