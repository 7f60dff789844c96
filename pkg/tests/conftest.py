import numpy as np
import pytest

from dpquant.core import SortedDataset

# Lines recorded by the acceptance suite, echoed in the terminal summary so
# they survive output capturing.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def five():
    return SortedDataset([1, 2, 3, 4, 5])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
