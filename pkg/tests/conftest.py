import numpy as np
import pytest

from almostmin.energy import half_space
from almostmin.field import GridSpec
from almostmin.solver import minimize

TILT = 0.3


def unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


@pytest.fixture(scope="session")
def tilted_solve():
    """Half-space data with a 0.3 rad normal, n=2, m=1, h=1/128."""
    nu = unit(TILT)
    return minimize(half_space(nu, [1.0]), GridSpec(2, 1, 1 / 128)), nu


@pytest.fixture(scope="session")
def rotated_solve():
    """Half-space data with the normal at 30 degrees, h=1/128."""
    nu = unit(np.pi / 6)
    return minimize(half_space(nu, [1.0]), GridSpec(2, 1, 1 / 128)), nu


@pytest.fixture(scope="session")
def coarse_solve():
    nu = unit(TILT)
    return minimize(half_space(nu, [1.0]), GridSpec(2, 1, 1 / 32)), nu


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def report():
    """report(k, ok, detail) records the outcome of acceptance criterion k."""
    def _report(k, ok, detail):
        ACCEPTANCE[k] = (bool(ok), detail)
        return bool(ok)
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
