from __future__ import annotations

import numpy as np
import pytest

from stdgdd.discretization import (
    ModelProblem, NoFlux, STDGSpace, assemble_jacobian, constant_in_time, project_function,
)
from stdgdd.mesh import adjacency_graph, build_structured_mesh


def sine(x, y):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def make_system(nx, ny, p=1, q=1, eps=0.05, problem=None, tau=0.05):
    """(space, graph, A) for a Burgers Jacobian at a smooth state."""
    mesh = build_structured_mesh(nx, ny).with_degree(p)
    space = STDGSpace(mesh, q, 1)
    problem = problem or ModelProblem(eps=eps)
    W = constant_in_time(space, project_function(space, sine))
    A = assemble_jacobian(space, problem, W, tau)
    return space, adjacency_graph(mesh, 1, q), A


@pytest.fixture
def small_system():
    return make_system(4, 4, p=1)


@pytest.fixture
def diffusion_system():
    return make_system(4, 4, p=1, problem=ModelProblem(eps=1.0, flux=NoFlux()))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
