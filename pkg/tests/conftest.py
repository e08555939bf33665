from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from nlspeak.domain import GaussianBump, Params, PowerNonlinearity, Problem, grid_for_spacing
from nlspeak.limit import build_S0

E_V0 = (4.0 / 3.0) * 2.0**1.5
REFERENCE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "reference.ini"


def reference_problem(eps=0.1, box=5.0, h=0.1, d=1, **params):
    grid = grid_for_spacing(d, box / eps, h)
    pot = GaussianBump(1.0, 1.0, (0.0,) * d, 1.0)
    return Problem(grid, pot, PowerNonlinearity(4.0), Params(eps=eps, **params))


@lru_cache(maxsize=None)
def localized(eps=0.1, box=5.0, h=0.1):
    """Reference problem with the S0 constants applied, and S0 itself."""
    problem = reference_problem(eps, box, h)
    s0 = build_S0(problem)
    return s0.apply(problem), s0


@lru_cache(maxsize=None)
def solved(eps):
    from nlspeak.minmax import solve

    problem, s0 = localized(eps)
    return solve(problem, s0)


def sech_soliton(grid, m=1.0, center=0.0):
    x = grid.points[..., 0] - center
    u = np.sqrt(2 * m) / np.cosh(np.sqrt(m) * x)
    u[~grid.interior] = 0.0
    return u


_LINES = []


@pytest.fixture
def report():
    def _report(n, ok, msg):
        _LINES.append((n, f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {msg}"))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
