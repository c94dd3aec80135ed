import numpy as np
import pytest

from multicontinuum.grid import CoarseGrid, FineGrid

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction runs")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def accept():
    """Record the outcome of a numbered criterion, then assert it."""
    def record(k, ok, detail):
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grids():
    fine = FineGrid(40)
    return fine, CoarseGrid(fine, 4)
