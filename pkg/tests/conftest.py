import numpy as np
import pytest

from adaptive_accept import ActionChunk, State

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def chunk_1d(values):
    return ActionChunk(np.asarray(values, dtype=float)[:, None])


def state_1d(x=0.0):
    return State([x])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
