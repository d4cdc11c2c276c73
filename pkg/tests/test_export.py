"""Exports: VTK structure, JSON round trips, float formatting."""

import json

import numpy as np
import pytest

from hdg_stokes.analysis import build_problem_mesh, polynomial_solution
from hdg_stokes.export import (
    fields_to_json,
    fields_to_vtk,
    mesh_to_json,
    mesh_to_vtk,
    stats_to_json,
    sweep_to_csv,
    _fmt,
)
from hdg_stokes.global_solver import solve_stokes
from hdg_stokes.mesh import generate_cartesian_mesh
from hdg_stokes.postprocess import postprocess_all

UNIT2 = ((0.0, 1.0), (0.0, 1.0))


@pytest.fixture(scope="module")
def solved_case():
    sol = polynomial_solution(2, 1, seed=12)
    mesh = build_problem_mesh(sol, "quad", 2)
    fields, stats = solve_stokes(mesh, 1, 4.0, sol)
    post = postprocess_all(fields, dirichlet=sol.velocity)
    return sol, fields, stats, post


def test_float_format_round_trips():
    for x in (1.0 / 3.0, np.pi, 1e-300, -2.5000000000000004):
        assert float(_fmt(x)) == x


def test_mesh_json_round_trip(tmp_path):
    mesh = generate_cartesian_mesh(UNIT2, 2, "tri1")
    path = tmp_path / "mesh.json"
    mesh_to_json(mesh, path)
    data = json.loads(path.read_text())
    assert data["dim"] == 2
    assert len(data["nodes"]) == mesh.n_nodes
    assert len(data["elements"]) == mesh.n_elements
    assert len(data["faces"]) == len(mesh.faces)
    tags = {f["tag"] for f in data["faces"]}
    assert tags == {None, "dirichlet"}


def test_mesh_vtk_structure(tmp_path):
    mesh = generate_cartesian_mesh(UNIT2, 2, "quad")
    path = tmp_path / "mesh.vtk"
    mesh_to_vtk(mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == f"POINTS {mesh.n_nodes} double"
    icells = lines.index(f"CELLS {mesh.n_elements} {mesh.n_elements * 5}")
    # lexicographic storage emitted as a cyclic quad walk
    first = lines[icells + 1].split()
    assert first[0] == "4"
    conn = mesh.elements[0][1]
    assert [int(v) for v in first[1:]] == [conn[0], conn[1], conn[3], conn[2]]
    itypes = lines.index(f"CELL_TYPES {mesh.n_elements}")
    assert lines[itypes + 1] == "9"


def test_fields_vtk_broken_grid(tmp_path, solved_case):
    _, fields, _, post = solved_case
    mesh = fields.mesh
    path = tmp_path / "fields.vtk"
    fields_to_vtk(fields, path, post=post)
    text = path.read_text()
    npts = 4 * mesh.n_elements        # vertices duplicated per element
    assert f"POINTS {npts} double" in text
    assert f"POINT_DATA {npts}" in text
    assert "VECTORS velocity double" in text
    assert "VECTORS velocity_post double" in text
    assert "SCALARS pressure double 1" in text
    assert f"CELL_DATA {mesh.n_elements}" in text
    assert "SCALARS boundary_pressure_mean double 1" in text


def test_fields_json_round_trip(tmp_path, solved_case):
    _, fields, _, post = solved_case
    path = tmp_path / "fields.json"
    fields_to_json(fields, path, post=post)
    data = json.loads(path.read_text())
    assert data["degree"] == fields.degree
    assert np.array_equal(np.asarray(data["velocity"]), fields.velocity)
    assert np.array_equal(np.asarray(data["pressure"]), fields.pressure)
    assert np.array_equal(np.asarray(data["velocity_post"]), post.velocity)
    back = {int(k): np.asarray(v) for k, v in data["trace"].items()}
    assert set(back) == set(fields.trace)
    for k, v in fields.trace.items():
        assert np.array_equal(back[k], v)


def test_stats_json(tmp_path, solved_case):
    _, _, stats, _ = solved_case
    path = tmp_path / "stats.json"
    stats_to_json(stats, path)
    data = json.loads(path.read_text())
    assert data["matrix_dim"] == stats["matrix_dim"]


def test_sweep_csv_columns(tmp_path):
    rows = [
        {"family": "quad", "k": 2, "level": 4, "tau": 4.0, "dofs": 100,
         "err_u": 1e-3, "err_p": 2e-3, "err_L": 3e-3, "err_ustar": 1e-4},
        {"family": "quad", "k": 2, "level": 4, "tau": 1e6,
         "failed": "factorization lost accuracy"},
    ]
    path = tmp_path / "sweep.csv"
    sweep_to_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "family,k,level,tau,dofs,err_u,err_p,err_L,err_ustar,failed"
    assert lines[1].startswith("quad,2,4,4,100,")
    assert lines[2].endswith("factorization lost accuracy")
