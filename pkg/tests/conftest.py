import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sinkflow import instances  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def sym():
    return instances.symmetric_2x2()


@pytest.fixture
def asym():
    return instances.asymmetric_2x2()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
