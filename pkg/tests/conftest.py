"""Shared solutions; each is solved once per session."""

import pytest

from bihiggs.geometry import Grid, VortexConfiguration
from bihiggs.model import canon
from bihiggs.strings import solve_string
from bihiggs.vortex import solve_vortex

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def canon_model():
    return canon()


@pytest.fixture(scope="session")
def radial_grid():
    return Grid.radial(100.0, 2048)


def _vortex(model, grid, n):
    return solve_vortex(model, grid, VortexConfiguration.build([[0.0, 0.0]], [n]))


@pytest.fixture(scope="session")
def vortex_n1(canon_model, radial_grid):
    return _vortex(canon_model, radial_grid, 1)


@pytest.fixture(scope="session")
def vortex_n2(canon_model, radial_grid):
    return _vortex(canon_model, radial_grid, 2)


@pytest.fixture(scope="session")
def string_n3(canon_model):
    grid = Grid.radial(100.0, 4096)
    conf = VortexConfiguration.build([[0.0, 0.0]], [3], newton_g=0.01)
    return solve_string(canon_model, grid, conf)


@pytest.fixture(scope="session")
def string_n1(canon_model, radial_grid):
    conf = VortexConfiguration.build([[0.0, 0.0]], [1], newton_g=0.01)
    return solve_string(canon_model, radial_grid, conf)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
