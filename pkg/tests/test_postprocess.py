"""Element postprocessing to degree k+1.

The bordered element solve must reproduce any field that already lies in the
target space when fed consistent data: the strain rows fix the field up to
rigid-body modes and the mean/rotation constraints fix those.
"""

import numpy as np
import pytest

from hdg_stokes.analysis import (
    build_problem_mesh,
    compute_errors,
    interpolate,
    l2_error,
    polynomial_solution,
)
from hdg_stokes.global_solver import solve_stokes
from hdg_stokes.local_solver import element_context
from hdg_stokes.mesh import DIRICHLET, generate_cartesian_mesh
from hdg_stokes.postprocess import postprocess_all, postprocess_element
from hdg_stokes.ref_element import cell_basis
from hdg_stokes.voigt import VoigtOps

UNIT = ((0.0, 1.0), (0.0, 1.0))


def test_rigid_rotation_reproduced_exactly():
    # zero strain data plus mean and circulation of u = (1 - x2, x1) forces
    # the postprocessed field to equal u itself
    def rigid(x):
        return np.stack([1.0 - x[:, 1], x[:, 0]], axis=-1)

    mesh = generate_cartesian_mesh(UNIT, 1, "quad")
    ops = VoigtOps(2)
    k, star, order = 1, 2, 8
    ctx = element_context(mesh, 0, star, order, face_degree=k)
    base = cell_basis("quad", k, order)
    mixed = np.zeros((3, base.ref.num_basis))
    velocity = interpolate(mesh, k, rigid)[0]
    face_trace = [rigid(ef.mapped.x) for ef in ctx.faces]
    coeffs = postprocess_element(ctx, ops, mixed, velocity, face_trace, base.vals)
    got = ctx.cell.vals @ coeffs.T
    assert np.max(np.abs(got - rigid(ctx.cell.x))) < 1e-12


@pytest.mark.parametrize("family,degree", [("quad", 1), ("tri1", 2), ("hex", 1)])
def test_exact_solution_passes_through(family, degree):
    # when the scheme solves a degree <= k solution exactly, postprocessing
    # must hand it back unchanged (it lies in the degree k+1 space)
    dim = 3 if family == "hex" else 2
    sol = polynomial_solution(dim, degree, seed=5)
    mesh = build_problem_mesh(sol, family, 2)
    fields, _ = solve_stokes(mesh, degree, 4.0, sol)
    post = postprocess_all(fields, dirichlet=sol.velocity)
    err = l2_error(mesh, post.degree, post.velocity, sol.velocity)
    assert err < 5e-10


def test_constraint_residuals(wang_quad_case):
    sol, fields, _ = wang_quad_case
    mesh, k = fields.mesh, fields.degree
    star = k + 1
    order = 2 * star + 2
    post = postprocess_all(fields, dirichlet=sol.velocity)
    ops = VoigtOps(2, sol.viscosity)
    worst_mean, worst_rot = 0.0, 0.0
    for e in range(mesh.n_elements):
        ctx = element_context(mesh, e, star, order, face_degree=k)
        cell = ctx.cell
        base_vals = cell_basis("quad", k, order).vals
        u_star_q = cell.vals @ post.velocity[e].T
        u_q = base_vals @ fields.velocity[e].T
        worst_mean = max(worst_mean, np.max(np.abs(
            cell.wdet @ (u_star_q - u_q)
        )))
        grads = np.einsum("qbj,cb->qcj", cell.grads, post.velocity[e])
        rot = cell.wdet @ ops.rotation_from_gradient(grads)
        circ = np.zeros(ops.nrr)
        for ef in ctx.faces:
            mf = ef.mapped
            if ef.tag == DIRICHLET:
                vals = sol.velocity(mf.x)
            else:
                vals = mf.facefun_vals @ fields.trace[ef.index].T
            circ += np.einsum("q,qc,qcr->r", mf.w, vals, ops.tangent_matrix(-mf.normal))
        worst_rot = max(worst_rot, np.max(np.abs(rot - circ)))
    assert worst_mean < 1e-10
    assert worst_rot < 1e-10


def test_postprocess_improves_the_velocity(wang_quad_case):
    sol, fields, _ = wang_quad_case
    post = postprocess_all(fields, dirichlet=sol.velocity)
    errs = compute_errors(fields, sol, post=post)
    assert errs["ustar"] < errs["u"]


def test_dirichlet_data_required():
    sol = polynomial_solution(2, 1, seed=6)
    mesh = build_problem_mesh(sol, "quad", 2)
    fields, _ = solve_stokes(mesh, 1, 4.0, sol)
    with pytest.raises(ValueError):
        postprocess_all(fields)
