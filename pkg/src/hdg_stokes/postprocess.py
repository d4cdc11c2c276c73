"""Element-by-element velocity postprocessing to degree k+1.

On each element a degree k+1 field is sought whose weighted strain matches
the recovered strain unknown, constrained so that its mean equals the mean of
the computed velocity and its integrated rotation equals the boundary
circulation of the trace unknown (Dirichlet data on tagged faces).  The
constraints remove exactly the rigid-body modes of the strain operator, so
the bordered element matrix is square and nonsingular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .global_solver import SolutionFields
from .local_solver import ElementContext, element_context
from .mesh import DIRICHLET, Mesh
from .ref_element import cell_basis
from .voigt import VoigtOps


@dataclass
class PostprocessedField:
    mesh: Mesh
    degree: int              # k + 1
    velocity: np.ndarray     # (n_el, dim, nb_star)


def postprocess_element(ctx: ElementContext, ops: VoigtOps, mixed_coeffs,
                        velocity_coeffs, face_trace, base_vals) -> np.ndarray:
    """Postprocess one element.

    ctx carries the degree k+1 cell; base_vals tabulates the degree-k basis
    at the same quadrature points.  face_trace lists, per face of ctx, the
    trace values (or Dirichlet data) at the face quadrature points, shape
    (nq, dim).  Returns coefficients of shape (dim, nb_star).
    """
    cell = ctx.cell
    w, G = cell.wdet, cell.grads
    nbs = cell.num_basis
    d, nrr = ops.dim, ops.nrr
    Bs = ops.strain_rows(G)
    Bw = Bs * (w[:, None, None, None] * ops.d_sqrt[None, None, :, None])
    K = np.tensordot(Bw, Bs, axes=([0, 2], [0, 2]))          # (a, c, b, e)
    K = K.transpose(1, 0, 3, 2).reshape(d * nbs, d * nbs)
    L_q = base_vals @ np.asarray(mixed_coeffs).T
    Bsw = Bs * w[:, None, None, None]
    b = -np.tensordot(Bsw, L_q, axes=([0, 2], [0, 1])).T.reshape(-1)

    nc = d + nrr
    C = np.zeros((nc, d * nbs))
    crhs = np.zeros(nc)
    ints = w @ cell.vals
    u_q = base_vals @ np.asarray(velocity_coeffs).T
    for c in range(d):
        C[c, c * nbs:(c + 1) * nbs] = ints
        crhs[c] = float(w @ u_q[:, c])
    W = ops.rotation_rows(G)
    C[d:, :] = np.tensordot(w, W, axes=(0, 0)).transpose(1, 2, 0).reshape(nrr, d * nbs)
    for ef, vals in zip(ctx.faces, face_trace):
        mf = ef.mapped
        # circulation along the positively oriented boundary
        tmat = ops.tangent_matrix(-mf.normal)
        crhs[d:] += np.einsum("q,qc,qcr->r", mf.w, np.asarray(vals), tmat)

    n = d * nbs
    bordered = np.zeros((n + nc, n + nc))
    bordered[:n, :n] = K
    bordered[:n, n:] = C.T
    bordered[n:, :n] = C
    full_rhs = np.concatenate([b, crhs])
    sol = sla.solve(bordered, full_rhs, assume_a="sym")
    return sol[:n].reshape(d, nbs)


def postprocess_all(fields: SolutionFields, dirichlet=None,
                    order: int | None = None) -> PostprocessedField:
    """Postprocess every element of a solved field.

    dirichlet supplies the boundary datum on Dirichlet faces (required if the
    mesh has any; it is the same callable the solve used).
    """
    mesh = fields.mesh
    k = fields.degree
    star = k + 1
    if order is None:
        order = 2 * star + 2
    ops = VoigtOps(mesh.dim, fields.viscosity)
    out = None
    for e in range(mesh.n_elements):
        ctx = element_context(mesh, e, star, order, face_degree=k)
        etype, _ = mesh.elements[e]
        base_vals = cell_basis(etype, k, order).vals
        face_trace = []
        for ef in ctx.faces:
            if ef.tag == DIRICHLET:
                if dirichlet is None:
                    raise ValueError("dirichlet data required to postprocess tagged faces")
                face_trace.append(np.asarray(dirichlet(ef.mapped.x)))
            else:
                coeffs = fields.trace[ef.index]
                face_trace.append(ef.mapped.facefun_vals @ coeffs.T)
        coeffs = postprocess_element(
            ctx, ops, fields.mixed[e], fields.velocity[e], face_trace, base_vals
        )
        if out is None:
            out = np.empty((mesh.n_elements,) + coeffs.shape)
        out[e] = coeffs
    return PostprocessedField(mesh=mesh, degree=star, velocity=out)
