"""Shared fixtures: a few solved problems reused across test modules."""

import pytest

from hdg_stokes.analysis import build_problem_mesh, wang_flow
from hdg_stokes.global_solver import solve_stokes


@pytest.fixture(scope="session")
def wang_quad_case():
    """Wang flow on the level-2 quad mesh, k=2: (solution, fields, stats)."""
    sol = wang_flow()
    mesh = build_problem_mesh(sol, "quad", 4)
    fields, stats = solve_stokes(mesh, 2, 4.0, sol)
    return sol, fields, stats


@pytest.fixture(scope="session")
def wang_tri2_case():
    """Wang flow on the level-2 tri2 mesh, k=2, at its default stabilization."""
    sol = wang_flow()
    mesh = build_problem_mesh(sol, "tri2", 4)
    fields, stats = solve_stokes(mesh, 2, 40.0, sol)
    return sol, fields, stats
