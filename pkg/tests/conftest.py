import numpy as np
import pytest

from pmelab.domain import SpaceTimeGrid


@pytest.fixture
def unit_grid():
    """(0, 1) x (0, 1) with dx = 1/8 and dt = 1/4."""
    return SpaceTimeGrid(((0.0, 1.0),), (9,), 5, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a PASS/FAIL line and asserts ``ok``."""

    def record(n: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
