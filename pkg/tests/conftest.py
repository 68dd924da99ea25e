import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    print(line)
    _ACCEPTANCE_LINES.append(line)


@pytest.fixture
def report():
    return record_acceptance


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
