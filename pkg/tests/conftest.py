import numpy as np
import pytest

from uncmap.bev_core import ClassTaxonomy, GridSpec

# acceptance lines collected by tests/test_acceptance.py, printed at the end
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def unit_grid():
    """8 x 8 grid at 1 m/px with the origin at pixel (0, 0)'s corner."""
    return GridSpec(height=8, width=8, resolution=1.0, origin=(0.0, 0.0))


@pytest.fixture
def taxonomy():
    return ClassTaxonomy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
