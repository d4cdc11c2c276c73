"""Global trace system: structure, constraints and backend agreement.

The strongest check here rebuilds the uncondensed (monolithic) saddle system
with all element unknowns kept and verifies the condensed path reproduces its
solution to roundoff; the condensation is then exact linear algebra, not an
approximation.
"""

from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from hdg_stokes import _umfpack
from hdg_stokes.analysis import (
    build_problem_mesh,
    expected_trace_dofs,
    polynomial_solution,
    wang_flow,
)
from hdg_stokes.global_solver import (
    assemble_global,
    enforce_pure_dirichlet,
    reconstruct_all,
    solve_stokes,
    solve_trace_system,
    _factor_superlu,
    _factor_umfpack,
)
from hdg_stokes.local_solver import (
    assemble_local,
    condense,
    element_context,
    local_residual,
)
from hdg_stokes.mesh import NEUMANN
from hdg_stokes.voigt import VoigtOps

TAU = 4.0


def _condense_mesh(mesh, problem, degree, tau=TAU):
    ops = VoigtOps(mesh.dim, problem.viscosity)
    locals_, condensed = [], []
    for e in range(mesh.n_elements):
        ctx = element_context(mesh, e, degree)
        ls = assemble_local(ctx, ops, tau, source=problem.source,
                            dirichlet=problem.velocity)
        locals_.append(ls)
        condensed.append(condense(ls, ops))
    return locals_, condensed


def _element_trace_values(system, ce, vec):
    uhat = np.empty(ce.n_trace)
    for fi, offset, width in ce.trace_faces:
        start = system.dof_map.face_offset[fi]
        uhat[offset:offset + width] = vec[start:start + width]
    return uhat


def test_trace_dof_counts_match_prediction():
    sol = wang_flow()
    mesh = build_problem_mesh(sol, "quad", 4)
    _, condensed = _condense_mesh(mesh, sol, 2)
    system = assemble_global(mesh, condensed, 2, traction=sol.traction)
    assert system.matrix.shape[0] == expected_trace_dofs(mesh, 2)

    psol = replace(polynomial_solution(2, 2, seed=0), neumann_predicate=None)
    pmesh = build_problem_mesh(psol, "tri1", 2)
    _, pc = _condense_mesh(pmesh, psol, 1)
    psys = enforce_pure_dirichlet(assemble_global(pmesh, pc, 1))
    assert psys.matrix.shape[0] == expected_trace_dofs(pmesh, 1)
    assert psys.dof_map.constrained


@pytest.mark.parametrize("family", ["quad", "tet"])
def test_global_matrix_symmetric(family):
    dim = 3 if family == "tet" else 2
    sol = replace(polynomial_solution(dim, 1, seed=1), neumann_predicate=None)
    mesh = build_problem_mesh(sol, family, 2)
    _, condensed = _condense_mesh(mesh, sol, 1)
    system = enforce_pure_dirichlet(assemble_global(mesh, condensed, 1))
    asym = abs(system.matrix - system.matrix.T).max()
    assert asym < 1e-10


def test_condensed_solution_matches_monolithic():
    # keep every element unknown and solve the full saddle problem:
    #   [ K_e  -B_e  -e_z ] [x  ]   [rhs_e]
    #   [-B^T   F     0   ] [uhat] = [t_N ]
    #   [-e_z^T 0     0   ] [rho ]   [0   ]
    sol = wang_flow()
    mesh = build_problem_mesh(sol, "quad", 2)
    degree = 1
    locals_, condensed = _condense_mesh(mesh, sol, degree)
    system = assemble_global(mesh, condensed, degree, traction=sol.traction)
    vec = solve_trace_system(system)
    fields = reconstruct_all(system, vec)

    n_loc = locals_[0].matrix.shape[0]
    n_glob = system.dof_map.n_total
    offset = n_loc * mesh.n_elements
    rows, cols, vals = [], [], []
    rhs = np.zeros(offset + n_glob)

    # t_N is whatever assemble_global added beyond the condensed loads
    t_n = system.rhs.copy()
    for ce in condensed:
        idx = system.dof_map.element_trace_dofs(ce)
        t_n[idx] -= ce.load_trace
        t_n[system.dof_map.rho_index(ce.element)] -= ce.load_rho
    rhs[offset:] = t_n

    def add(r, c, block):
        br, bc = np.meshgrid(r, c, indexing="ij")
        rows.append(br.ravel())
        cols.append(bc.ravel())
        vals.append(np.asarray(block).ravel())

    for e, (ls, ce) in enumerate(zip(locals_, condensed)):
        loc = np.arange(e * n_loc, (e + 1) * n_loc)
        glob = offset + system.dof_map.element_trace_dofs(ce)
        ri = offset + system.dof_map.rho_index(e)
        add(loc, loc, ls.matrix)
        add(loc, glob, -ls.trace)
        add(glob, loc, -ls.trace.T)
        add(glob, glob, ls.face_mass)
        add(loc[-1:], [ri], [[-1.0]])
        add([ri], loc[-1:], [[-1.0]])
        rhs[loc] = ls.rhs
    mono = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(offset + n_glob, offset + n_glob),
    ).tocsc()
    full = spla.spsolve(mono, rhs)

    assert np.max(np.abs(full[offset:] - vec)) < 1e-10
    for e, ce in enumerate(condensed):
        x = full[e * n_loc:(e + 1) * n_loc]
        nb = ce.n_basis
        nL, nU = ce.msd * nb, ce.dim * nb
        assert np.max(np.abs(x[:nL].reshape(ce.msd, nb) - fields.mixed[e])) < 1e-10
        assert np.max(np.abs(x[nL:nL + nU].reshape(ce.dim, nb) - fields.velocity[e])) < 1e-10
        assert np.max(np.abs(x[nL + nU:nL + nU + nb] - fields.pressure[e])) < 1e-10


def test_solution_satisfies_local_equations_and_compatibility(wang_quad_case):
    sol, fields, _ = wang_quad_case
    mesh, degree = fields.mesh, fields.degree
    ops = VoigtOps(mesh.dim, sol.viscosity)
    worst_local, worst_compat = 0.0, 0.0
    for e in range(mesh.n_elements):
        ctx = element_context(mesh, e, degree)
        ls = assemble_local(ctx, ops, TAU, source=sol.source, dirichlet=sol.velocity)
        ce = condense(ls, ops)
        uhat = np.empty(ce.n_trace)
        for fi, offset, width in ce.trace_faces:
            uhat[offset:offset + width] = fields.trace[fi].ravel()
        x = np.concatenate(
            [fields.mixed[e].ravel(), fields.velocity[e].ravel(),
             fields.pressure[e], [fields.zeta[e]]]
        )
        worst_local = max(worst_local, local_residual(ls, x, uhat, fields.rho[e]))
        worst_compat = max(worst_compat, abs(ls.g_vec @ uhat + ls.d_data))
    assert worst_local < 1e-9
    assert worst_compat < 1e-9


def test_pure_dirichlet_constraint_and_mean_pressure():
    sol = replace(polynomial_solution(2, 2, seed=2), neumann_predicate=None)
    mesh = build_problem_mesh(sol, "quad", 3)
    fields, stats = solve_stokes(mesh, 2, TAU, sol)
    assert fields.multiplier is not None
    # recovered boundary pressure mean is pinned to zero
    _, condensed = _condense_mesh(mesh, sol, 2)
    num, den = 0.0, 0.0
    for ce in condensed:
        if ce.outer_measure == 0.0:
            continue
        num += float(ce.outer_mass @ fields.pressure[ce.element])
        den += ce.outer_measure
    assert abs(num / den) < 1e-10


def test_pure_dirichlet_guards():
    sol = wang_flow()
    mesh = build_problem_mesh(sol, "quad", 2)
    _, condensed = _condense_mesh(mesh, sol, 1)
    system = assemble_global(mesh, condensed, 1, traction=sol.traction)
    assert mesh.tagged_faces(NEUMANN)
    with pytest.raises(ValueError):
        enforce_pure_dirichlet(system)
    psol = replace(polynomial_solution(2, 1, seed=3), neumann_predicate=None)
    pmesh = build_problem_mesh(psol, "quad", 2)
    _, pc = _condense_mesh(pmesh, psol, 1)
    psys = enforce_pure_dirichlet(assemble_global(pmesh, pc, 1))
    with pytest.raises(ValueError):
        enforce_pure_dirichlet(psys)


def test_stats_keys_present(wang_quad_case):
    _, _, stats = wang_quad_case
    for key in ("n_trace", "n_rho", "nnz", "matrix_dim", "factor_nnz",
                "factor_seconds", "solve_seconds", "residual",
                "local_seconds", "global_assembly_seconds"):
        assert key in stats
    assert stats["residual"] < 1e-10


@pytest.mark.skipif(not _umfpack.available, reason="UMFPACK library not present")
def test_backends_agree():
    sol = wang_flow()
    mesh = build_problem_mesh(sol, "quad", 3)
    _, condensed = _condense_mesh(mesh, sol, 2)
    system = assemble_global(mesh, condensed, 2, traction=sol.traction)
    solve_a, _ = _factor_umfpack(system.matrix, system)
    solve_b, _ = _factor_superlu(system.matrix, system)
    xa, xb = solve_a(system.rhs), solve_b(system.rhs)
    scale = np.max(np.abs(xa)) or 1.0
    assert np.max(np.abs(xa - xb)) / scale < 1e-9


def test_polynomial_exactness_through_full_pipeline():
    from hdg_stokes.analysis import compute_errors

    sol = polynomial_solution(3, 1, seed=4)
    mesh = build_problem_mesh(sol, "hex", 2)
    fields, _ = solve_stokes(mesh, 1, TAU, sol)
    errs = compute_errors(fields, sol)
    assert errs["u"] < 1e-10
    assert errs["p"] < 1e-9
    assert errs["L"] < 1e-9
