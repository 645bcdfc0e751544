import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from constrained_nn.data_io import make_dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def toy_dataset():
    """16 rows, d=4, both groups with both labels."""
    rng = np.random.default_rng(3)
    X = rng.normal(size=(16, 4))
    z = np.array([1, -1] * 8, dtype=float)
    group = np.array([True] * 8 + [False] * 8)
    return make_dataset(X, z, group)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
