"""Element-local saddle systems, static condensation and field recovery.

Each element couples the Voigt strain unknown L, the velocity u, the pressure
p and one scalar multiplier enforcing that the element-boundary pressure mean
matches the hybrid unknown rho.  The local matrix is symmetric indefinite:

    [ -M      A_Lu    0     0   ] [L]     [0  ]
    [ A_Lu^T  S_tau   A_up  0   ] [u]  =  [f_s] + B uhat + e_zeta rho
    [ 0       A_up^T  0     c   ] [p]     [f_D]
    [ 0       0       c^T   0   ] [z]

with c the boundary integrals of the pressure basis scaled by the boundary
measure.  Dirichlet data folds into the right-hand side, traces on the
remaining faces couple through B.  Condensation eliminates (L, u, p, z) per
element and leaves a symmetric system in (uhat, rho).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .mesh import DIRICHLET, Mesh
from .ref_element import MappedCell, MappedFace, cell_basis, face_basis
from .voigt import VoigtOps


class FactorizationError(RuntimeError):
    """A local or global factorization failed or lost accuracy."""


def default_order(degree: int) -> int:
    """Assembly quadrature order: exact for affine cells at degree k."""
    return 2 * degree + 2


@dataclass
class ElementFace:
    index: int
    tag: str | None
    mapped: MappedFace
    n_face_basis: int

    @property
    def has_trace(self):
        return self.tag != DIRICHLET


@dataclass
class ElementContext:
    element: int
    element_type: str
    degree: int
    order: int
    cell: MappedCell
    faces: list


def element_context(mesh: Mesh, e: int, degree: int, order: int | None = None,
                    face_degree: int | None = None) -> ElementContext:
    """Quadrature and basis data for one element and all its faces."""
    etype, _ = mesh.elements[e]
    if order is None:
        order = default_order(degree)
    if face_degree is None:
        face_degree = degree
    cell = MappedCell(cell_basis(etype, degree, order), mesh.element_coords(e))
    faces = []
    for fi in mesh.element_faces[e]:
        f = mesh.faces[fi]
        fb = face_basis(etype, degree, face_degree, order, mesh.corners_for(fi, e))
        mf = MappedFace(fb, mesh.nodes[list(f.nodes)], cell.centroid)
        faces.append(
            ElementFace(index=fi, tag=f.tag, mapped=mf, n_face_basis=fb.face_ref.num_basis)
        )
    return ElementContext(
        element=e, element_type=etype, degree=degree, order=order, cell=cell, faces=faces
    )


@dataclass
class LocalSystem:
    """Uncondensed element system plus the trace coupling blocks."""

    element: int
    element_type: str
    degree: int
    tau: float
    n_basis: int
    matrix: np.ndarray           # (n, n) symmetric indefinite
    rhs: np.ndarray              # (n,) data terms from s and u_D
    trace: np.ndarray            # (n, n_hat) coupling to face traces
    face_mass: np.ndarray        # (n_hat, n_hat) tau-weighted trace mass
    trace_faces: list            # (face index, offset, width) per coupled face
    g_vec: np.ndarray            # (n_hat,) normal integrals of the face basis
    d_data: float                # Dirichlet compatibility integral of u_D . n
    boundary_mass: np.ndarray    # (n_p,) basis integrals over the full element boundary
    boundary_measure: float
    outer_mass: np.ndarray       # (n_p,) same, restricted to faces on the domain boundary
    outer_measure: float


def assemble_local(ctx: ElementContext, ops: VoigtOps, tau: float,
                   source=None, dirichlet=None) -> LocalSystem:
    """Assemble one element's saddle system and its trace coupling.

    source and dirichlet are callables of physical coordinates (or None for
    zero data); dirichlet is evaluated on faces tagged Dirichlet only.
    """
    if not tau > 0.0:
        raise ValueError("stabilization parameter tau must be positive")
    cell = ctx.cell
    nb = cell.num_basis
    d, msd = ops.dim, ops.msd
    nL, nU, nP = msd * nb, d * nb, nb
    ntot = nL + nU + nP + 1
    uslc = slice(nL, nL + nU)
    pslc = slice(nL + nU, nL + nU + nP)

    w, V, G = cell.wdet, cell.vals, cell.grads
    K = np.zeros((ntot, ntot))
    rhs = np.zeros(ntot)

    Vw = V * w[:, None]
    M = V.T @ Vw
    for I in range(msd):
        K[I * nb:(I + 1) * nb, I * nb:(I + 1) * nb] = -M

    B = ops.strain_rows(G)
    ALu = np.tensordot(B * w[:, None, None, None], V, axes=(0, 0))  # (a, i, c, b)
    ALu = ALu.transpose(1, 0, 2, 3) * ops.d_sqrt[:, None, None, None]
    ALu = ALu.reshape(nL, nU)
    K[:nL, uslc] = ALu
    K[uslc, :nL] = ALu.T

    Aup = np.tensordot(Vw, G, axes=(0, 0)).transpose(2, 0, 1).reshape(nU, nP)
    K[uslc, pslc] = Aup
    K[pslc, uslc] = Aup.T

    if source is not None:
        s_q = np.asarray(source(cell.x))
        rhs[uslc] += np.einsum("q,qa,qc->ca", w, V, s_q).reshape(-1)

    trace_faces = []
    n_hat = sum(d * ef.n_face_basis for ef in ctx.faces if ef.has_trace)
    Bfull = np.zeros((ntot, n_hat))
    Ffull = np.zeros((n_hat, n_hat))
    g_vec = np.zeros(n_hat)
    S = np.zeros((nU, nU))
    c_vec = np.zeros(nP)
    boundary_measure = 0.0
    outer_mass = np.zeros(nP)
    outer_measure = 0.0
    d_data = 0.0
    offset = 0

    for ef in ctx.faces:
        mf = ef.mapped
        wf, n, Vt, Vf = mf.w, mf.normal, mf.trace_vals, mf.facefun_vals
        Sf = Vt.T @ (Vt * wf[:, None])
        for c in range(d):
            S[c * nb:(c + 1) * nb, c * nb:(c + 1) * nb] += tau * Sf
        c_vec += wf @ Vt
        boundary_measure += mf.area
        if ef.tag is not None:
            outer_mass += wf @ Vt
            outer_measure += mf.area
        Nmat = ops.normal_matrix(n)
        if ef.tag == DIRICHLET:
            uD = np.asarray(dirichlet(mf.x)) if dirichlet is not None else np.zeros_like(mf.x)
            fL = np.einsum("q,qic,qc,qa->ia", wf, Nmat, uD, Vt) * ops.d_sqrt[:, None]
            rhs[:nL] += fL.reshape(-1)
            rhs[uslc] += tau * np.einsum("q,qa,qc->ca", wf, Vt, uD).reshape(-1)
            rhs[pslc] += np.einsum("q,qa,qc,qc->a", wf, Vt, uD, n)
            d_data += float(np.einsum("q,qc,qc->", wf, uD, n))
        else:
            nfn = ef.n_face_basis
            width = d * nfn
            cols = slice(offset, offset + width)
            VtVf = Vt[:, :, None] * Vf[:, None, :]
            BL = np.tensordot(Nmat * wf[:, None, None], VtVf, axes=(0, 0))
            BL = BL.transpose(0, 2, 1, 3)                    # (i, a, c, f)
            BL *= ops.d_sqrt[:, None, None, None]
            Bfull[:nL, cols] = BL.reshape(nL, width)
            Bu = Vt.T @ (Vf * wf[:, None])
            for c in range(d):
                Bfull[nL + c * nb:nL + (c + 1) * nb, offset + c * nfn:offset + (c + 1) * nfn] = tau * Bu
            Bfull[pslc, cols] = np.einsum("q,qa,qc,qf->acf", wf, Vt, n, Vf).reshape(nP, width)
            Ff = Vf.T @ (Vf * wf[:, None])
            for c in range(d):
                blk = slice(offset + c * nfn, offset + (c + 1) * nfn)
                Ffull[blk, blk] = tau * Ff
            g_vec[cols] = np.einsum("q,qc,qf->cf", wf, n, Vf).reshape(-1)
            trace_faces.append((ef.index, offset, width))
            offset += width

    K[uslc, uslc] += S
    K[pslc, -1] = c_vec / boundary_measure
    K[-1, pslc] = c_vec / boundary_measure

    return LocalSystem(
        element=ctx.element,
        element_type=ctx.element_type,
        degree=ctx.degree,
        tau=tau,
        n_basis=nb,
        matrix=K,
        rhs=rhs,
        trace=Bfull,
        face_mass=Ffull,
        trace_faces=trace_faces,
        g_vec=g_vec,
        d_data=d_data,
        boundary_mass=c_vec,
        boundary_measure=boundary_measure,
        outer_mass=outer_mass,
        outer_measure=outer_measure,
    )


@dataclass
class CondensedElement:
    """Trace-level blocks of one element plus its recovery operators.

    The dense recovery operators dominate memory on large 3D runs;
    ``strip_recovery`` drops them (keeping only the pressure rows, which the
    global pressure constraint needs) after which fields must be recovered by
    re-solving the local system, see ``reconstruct_direct``.
    """

    element: int
    element_type: str
    degree: int
    tau: float
    n_basis: int
    msd: int
    dim: int
    trace_faces: list
    K_trace: np.ndarray | None   # (n_hat, n_hat)
    K_trace_rho: np.ndarray      # (n_hat,)
    K_rho_rho: float
    load_trace: np.ndarray       # (n_hat,)
    load_rho: float
    recovery_trace: np.ndarray | None   # (n, n_hat)
    recovery_rho: np.ndarray | None     # (n,)
    recovery_fixed: np.ndarray | None   # (n,)
    g_vec: np.ndarray
    d_data: float
    boundary_mass: np.ndarray
    boundary_measure: float
    outer_mass: np.ndarray
    outer_measure: float
    pressure_recovery_blocks: tuple | None = None

    @property
    def n_trace(self):
        return sum(width for _, _, width in self.trace_faces)

    def pressure_rows(self):
        nb = self.n_basis
        start = (self.msd + self.dim) * nb
        return slice(start, start + nb)

    def strip_recovery(self):
        pr = self.pressure_rows()
        self.pressure_recovery_blocks = (
            self.recovery_trace[pr].copy(),
            self.recovery_rho[pr].copy(),
            self.recovery_fixed[pr].copy(),
        )
        self.recovery_trace = None
        self.recovery_rho = None
        self.recovery_fixed = None

    def pressure_recovery(self):
        """(trace, rho, fixed) recovery restricted to the pressure rows."""
        if self.pressure_recovery_blocks is not None:
            return self.pressure_recovery_blocks
        pr = self.pressure_rows()
        return self.recovery_trace[pr], self.recovery_rho[pr], self.recovery_fixed[pr]


def condense(system: LocalSystem, ops: VoigtOps) -> CondensedElement:
    """Eliminate the element unknowns, keeping the trace coupling blocks."""
    n = system.matrix.shape[0]
    n_hat = system.trace.shape[1]
    rhs = np.empty((n, n_hat + 2))
    rhs[:, :n_hat] = system.trace
    rhs[:, n_hat] = 0.0
    rhs[-1, n_hat] = 1.0
    rhs[:, n_hat + 1] = system.rhs
    try:
        X = sla.solve(system.matrix, rhs, assume_a="sym")
    except sla.LinAlgError as exc:
        raise FactorizationError(
            f"local factorization failed on element {system.element} "
            f"(tau={system.tau}, n={n})"
        ) from exc
    XB = X[:, :n_hat]
    xz = X[:, n_hat]
    xf = X[:, n_hat + 1]
    K_trace_rho = -system.trace.T @ xz
    return CondensedElement(
        element=system.element,
        element_type=system.element_type,
        degree=system.degree,
        tau=system.tau,
        n_basis=system.n_basis,
        msd=ops.msd,
        dim=ops.dim,
        trace_faces=system.trace_faces,
        K_trace=system.face_mass - system.trace.T @ XB,
        K_trace_rho=K_trace_rho,
        K_rho_rho=-float(xz[-1]),
        load_trace=system.trace.T @ xf,
        load_rho=float(xf[-1]),
        recovery_trace=XB,
        recovery_rho=xz,
        recovery_fixed=xf,
        g_vec=system.g_vec,
        d_data=system.d_data,
        boundary_mass=system.boundary_mass,
        boundary_measure=system.boundary_measure,
        outer_mass=system.outer_mass,
        outer_measure=system.outer_measure,
    )


def _split_interior(x, msd: int, dim: int, nb: int):
    nL, nU = msd * nb, dim * nb
    L = x[:nL].reshape(msd, nb)
    u = x[nL:nL + nU].reshape(dim, nb)
    p = x[nL + nU:nL + nU + nb].copy()
    return L, u, p, float(x[-1])


def reconstruct(ce: CondensedElement, trace_values, rho: float):
    """Recover (L, u, p, zeta) from the element's trace values and rho.

    Returns coefficient arrays of shapes (msd, nb), (dim, nb), (nb,) and the
    scalar multiplier.
    """
    if ce.recovery_trace is None:
        raise ValueError(
            "recovery operators were stripped; rebuild the local system and "
            "use reconstruct_direct"
        )
    x = ce.recovery_fixed + ce.recovery_trace @ np.asarray(trace_values) + ce.recovery_rho * rho
    return _split_interior(x, ce.msd, ce.dim, ce.n_basis)


def reconstruct_direct(system: LocalSystem, ops: VoigtOps, trace_values, rho: float):
    """Recover the element fields by re-solving the local saddle system.

    Memory-lean twin of ``reconstruct`` for runs where the dense recovery
    operators were dropped after condensation.
    """
    b = system.rhs + system.trace @ np.asarray(trace_values)
    b[-1] += rho
    try:
        x = sla.solve(system.matrix, b, assume_a="sym")
    except sla.LinAlgError as exc:
        raise FactorizationError(
            f"local factorization failed on element {system.element} "
            f"(tau={system.tau}, n={system.matrix.shape[0]})"
        ) from exc
    return _split_interior(x, ops.msd, ops.dim, system.n_basis)


def local_residual(system: LocalSystem, solution, trace_values, rho: float) -> float:
    """Residual norm of the uncondensed equations at a candidate solution."""
    r = system.matrix @ solution - system.rhs - system.trace @ np.asarray(trace_values)
    r[-1] -= rho
    return float(np.linalg.norm(r))
