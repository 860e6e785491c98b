import numpy as np
import pytest
from hypothesis import settings

from fedecg.features import FeatureMatrix, FeatureRegistry

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_matrix(X, y, ids=None):
    X = np.asarray(X, dtype=np.float64)
    reg = FeatureRegistry.default().subset(range(20, 20 + X.shape[1]))
    ids = ids or [f"r{i}" for i in range(X.shape[0])]
    return FeatureMatrix(X, np.asarray(y, dtype=np.int64), ids, reg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
