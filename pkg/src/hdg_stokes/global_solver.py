"""Global trace system: assembly, pressure constraint, solve, reconstruction.

Unknowns are the face traces of the velocity (suppressed on Dirichlet faces)
followed by one boundary-pressure mean per element, plus one Lagrange
multiplier when the problem is pure Dirichlet.  Per element the condensed
blocks are

    [ K_trace      K_trace_rho ] [uhat]   [load_trace + t_N]
    [ K_trace_rho^T  K_rho_rho ] [rho ] = [load_rho        ]

where the rho row is the element compatibility condition (the normal flux of
the traces balances the Dirichlet data).  The assembled matrix is symmetric
indefinite and solved with a sparse direct factorization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _umfpack
from .local_solver import (
    CondensedElement,
    FactorizationError,
    assemble_local,
    condense,
    default_order,
    element_context,
    reconstruct,
    reconstruct_direct,
)
from .mesh import DIRICHLET, NEUMANN, Mesh
from .ref_element import MappedFace, build_reference_element, face_basis, face_type
from .voigt import VoigtOps


@dataclass(frozen=True)
class TraceDofMap:
    """Global numbering: face blocks first, then one rho per element."""

    n_trace: int
    n_rho: int
    constrained: bool
    face_offset: dict
    face_width: dict

    @property
    def n_total(self):
        return self.n_trace + self.n_rho + (1 if self.constrained else 0)

    def rho_index(self, element: int) -> int:
        return self.n_trace + element

    def element_trace_dofs(self, ce: CondensedElement) -> np.ndarray:
        idx = np.empty(ce.n_trace, dtype=np.int64)
        for fi, offset, width in ce.trace_faces:
            start = self.face_offset[fi]
            idx[offset:offset + width] = np.arange(start, start + width)
        return idx


def build_dof_map(mesh: Mesh, degree: int) -> TraceDofMap:
    face_offset, face_width = {}, {}
    pos = 0
    for i, f in enumerate(mesh.faces):
        if f.tag == DIRICHLET:
            continue
        etype, _ = mesh.elements[f.left]
        nfn = build_reference_element(face_type(etype), degree).num_basis
        face_offset[i] = pos
        face_width[i] = mesh.dim * nfn
        pos += mesh.dim * nfn
    return TraceDofMap(
        n_trace=pos,
        n_rho=mesh.n_elements,
        constrained=False,
        face_offset=face_offset,
        face_width=face_width,
    )


@dataclass
class TraceSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: TraceDofMap
    mesh: Mesh
    degree: int
    condensed: list
    viscosity: float
    stats: dict = field(default_factory=dict)
    order: int | None = None


def assemble_global(mesh: Mesh, condensed: list, degree: int, viscosity: float = 1.0,
                    traction=None, order: int | None = None,
                    consume: bool = False) -> TraceSystem:
    """Assemble the condensed blocks into the global sparse system.

    traction, if given, is a callable t(x, n) evaluated on Neumann faces.
    With consume=True each element's trace matrix is released once copied,
    which caps assembly memory on large runs (the block is not needed again).
    """
    if order is None:
        order = default_order(degree)
    dof_map = build_dof_map(mesh, degree)
    n = dof_map.n_total
    total = sum(ce.n_trace * ce.n_trace + 2 * ce.n_trace + 1 for ce in condensed)
    rows = np.empty(total, dtype=np.int32)
    cols = np.empty(total, dtype=np.int32)
    vals = np.empty(total)
    pos = 0
    rhs = np.zeros(n)
    for ce in condensed:
        idx = dof_map.element_trace_dofs(ce).astype(np.int32)
        ri = dof_map.rho_index(ce.element)
        w = len(idx)
        blk = slice(pos, pos + w * w)
        rows[blk] = np.repeat(idx, w)
        cols[blk] = np.tile(idx, w)
        vals[blk] = ce.K_trace.ravel()
        pos += w * w
        rows[pos:pos + w] = idx
        cols[pos:pos + w] = ri
        vals[pos:pos + w] = ce.K_trace_rho
        pos += w
        rows[pos:pos + w] = ri
        cols[pos:pos + w] = idx
        vals[pos:pos + w] = ce.K_trace_rho
        pos += w
        rows[pos] = ri
        cols[pos] = ri
        vals[pos] = ce.K_rho_rho
        pos += 1
        rhs[idx] += ce.load_trace
        rhs[ri] += ce.load_rho
        if consume:
            ce.K_trace = None
    if traction is not None:
        for fi in mesh.tagged_faces(NEUMANN):
            f = mesh.faces[fi]
            etype, _ = mesh.elements[f.left]
            fb = face_basis(etype, degree, degree, order, f.left_corners)
            centroid = mesh.element_coords(f.left).mean(axis=0)
            mf = MappedFace(fb, mesh.nodes[list(f.nodes)], centroid)
            t_q = np.asarray(traction(mf.x, mf.normal))
            vec = np.einsum("q,qf,qc->cf", mf.w, mf.facefun_vals, t_q).reshape(-1)
            start = dof_map.face_offset[fi]
            rhs[start:start + dof_map.face_width[fi]] += vec
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
    del rows, cols, vals
    matrix = coo.tocsr()
    del coo
    return TraceSystem(
        matrix=matrix,
        rhs=rhs,
        dof_map=dof_map,
        mesh=mesh,
        degree=degree,
        condensed=condensed,
        viscosity=viscosity,
        stats={"n_trace": dof_map.n_trace, "n_rho": dof_map.n_rho, "nnz": matrix.nnz},
        order=order,
    )


def enforce_pure_dirichlet(system: TraceSystem) -> TraceSystem:
    """Append the zero-mean boundary-pressure constraint for pure Dirichlet.

    Without Neumann faces the pressure is determined only up to a constant;
    the appended symmetric row pins the mean of the recovered pressure over
    the domain boundary to zero through one Lagrange multiplier.
    """
    if system.dof_map.constrained:
        raise ValueError("pressure constraint already applied")
    if system.mesh.tagged_faces(NEUMANN):
        raise ValueError("pressure constraint only applies to pure Dirichlet problems")
    n = system.matrix.shape[0]
    row = np.zeros(n)
    rhs_c = 0.0
    total = sum(ce.outer_measure for ce in system.condensed)
    if not total > 0.0:
        raise ValueError("mesh has no boundary faces")
    for ce in system.condensed:
        if ce.outer_measure == 0.0:
            continue
        wp = ce.outer_mass
        rec_t, rec_r, rec_f = ce.pressure_recovery()
        idx = system.dof_map.element_trace_dofs(ce)
        row[idx] += wp @ rec_t
        row[system.dof_map.rho_index(ce.element)] += float(wp @ rec_r)
        rhs_c -= float(wp @ rec_f)
    row /= total
    rhs_c /= total
    col = sp.csr_matrix(row[:, None])
    bordered = sp.bmat([[system.matrix, col], [col.T, None]], format="csr")
    dof_map = TraceDofMap(
        n_trace=system.dof_map.n_trace,
        n_rho=system.dof_map.n_rho,
        constrained=True,
        face_offset=system.dof_map.face_offset,
        face_width=system.dof_map.face_width,
    )
    stats = dict(system.stats)
    stats["nnz"] = bordered.nnz
    return TraceSystem(
        matrix=bordered,
        rhs=np.append(system.rhs, rhs_c),
        dof_map=dof_map,
        mesh=system.mesh,
        degree=system.degree,
        condensed=system.condensed,
        viscosity=system.viscosity,
        stats=stats,
        order=system.order,
    )


_DISSECTION_CUTOFF = 5000
_DISSECTION_LEAF = 8
# above this projected recovery footprint the dense per-element recovery
# operators are dropped and fields are recovered by re-solving locally
_LEAN_RECOVERY_BYTES = 500 * 2**20


def _dissection_permutation(system: TraceSystem) -> np.ndarray:
    """Symmetric fill-reducing ordering of the trace system.

    Geometric nested dissection: elements are bisected recursively along the
    widest centroid coordinate, faces whose two neighbours land in different
    halves become the separator and are numbered after both halves.  Boundary
    pressure means are numbered with the leaf holding their element, the
    optional global multiplier stays last.
    """
    mesh, dof_map = system.mesh, system.dof_map
    centroids = np.array([mesh.element_coords(e).mean(axis=0) for e in range(mesh.n_elements)])
    ranges = []

    def emit_faces(face_ids):
        for fi in face_ids:
            start = dof_map.face_offset[fi]
            ranges.append(np.arange(start, start + dof_map.face_width[fi]))

    def split_index(vals):
        # cut at the widest coordinate gap in the middle third, so cuts fall
        # between structural layers instead of through them
        n = len(vals)
        lo, hi = n // 3, 2 * n // 3
        if hi - lo < 2:
            return n // 2
        gaps = vals[lo + 1:hi] - vals[lo:hi - 1]
        top = gaps.max()
        cand = np.flatnonzero(gaps >= top - 1e-12 * max(1.0, abs(top)))
        centre = (n - 1) / 2.0 - lo
        return lo + int(cand[np.argmin(np.abs(cand - centre))]) + 1

    def recurse(elems, face_ids):
        if len(elems) <= _DISSECTION_LEAF:
            emit_faces(face_ids)
            ranges.append(np.asarray([dof_map.rho_index(e) for e in elems], dtype=np.int64))
            return
        pts = centroids[elems]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        order = np.argsort(pts[:, axis], kind="stable")
        half = split_index(pts[order, axis])
        side_a = set(elems[order[:half]])
        in_a, in_b, sep = [], [], []
        for fi in face_ids:
            f = mesh.faces[fi]
            left_a = f.left in side_a
            if f.right is None or (f.right in side_a) == left_a:
                (in_a if left_a else in_b).append(fi)
            else:
                sep.append(fi)
        recurse(elems[order[:half]], in_a)
        recurse(elems[order[half:]], in_b)
        emit_faces(sep)

    recurse(np.arange(mesh.n_elements), list(dof_map.face_offset))
    if dof_map.constrained:
        ranges.append(np.asarray([dof_map.n_total - 1], dtype=np.int64))
    perm = np.concatenate(ranges)
    if len(perm) != dof_map.n_total:
        raise RuntimeError("dissection ordering lost degrees of freedom")
    return perm


def _factor_umfpack(matrix, system):
    lu = _umfpack.UmfpackLU(matrix)
    return lu.solve, lu.nnz


def _permuted_csc(matrix, perm, dtype=None):
    # staged so at most one intermediate copy is alive at a time
    half = matrix[perm]
    permuted = half[:, perm]
    del half
    permuted = permuted.tocsc()
    if dtype is not None:
        permuted = permuted.astype(dtype)
    return permuted


def _factor_dissection(matrix, system):
    perm = _dissection_permutation(system)
    lu = spla.splu(_permuted_csc(matrix, perm), permc_spec="NATURAL",
                   options=dict(SymmetricMode=True, DiagPivotThresh=0.1))
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))

    def solve(b):
        return lu.solve(b[perm])[inverse]

    return solve, lu.nnz


def _factor_superlu(matrix, system):
    lu = spla.splu(matrix.tocsc())
    return (lambda b: lu.solve(b)), lu.nnz


_SINGLE_PRECISION_CUTOFF = 60000


def _factor_dissection_f32(matrix, system):
    """Single precision factorization with double precision refinement.

    Halves the factor memory, which is what lets the largest 3D trace
    systems fit in RAM; a few refinement sweeps with the double precision
    matrix recover full accuracy.
    """
    perm = _dissection_permutation(system)
    lu = spla.splu(_permuted_csc(matrix, perm, dtype=np.float32), permc_spec="NATURAL",
                   options=dict(SymmetricMode=True, DiagPivotThresh=0.1))
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))

    def solve(b):
        x = np.zeros_like(b)
        norm_b = float(np.linalg.norm(b)) or 1.0
        for _ in range(10):
            r = b - matrix @ x
            if float(np.linalg.norm(r)) / norm_b < 1e-13:
                break
            x = x + lu.solve(r[perm].astype(np.float32)).astype(np.float64)[inverse]
        return x

    return solve, lu.nnz


def _factor_attempts(matrix):
    attempts = []
    if _umfpack.available:
        attempts.append(_factor_umfpack)
    if matrix.shape[0] > _SINGLE_PRECISION_CUTOFF:
        # double precision factors of systems this large overrun desk RAM
        attempts.append(_factor_dissection_f32)
        return attempts
    if matrix.shape[0] > _DISSECTION_CUTOFF:
        attempts.append(_factor_dissection)
    attempts.append(_factor_superlu)
    return attempts


def solve_trace_system(system: TraceSystem) -> np.ndarray:
    """Direct sparse solve; records timings and the relative residual.

    Backends convert to their preferred storage themselves, so the assembled
    CSR matrix stays the only long-lived copy.
    """
    matrix = system.matrix
    attempts = _factor_attempts(matrix)
    norm_b = float(np.linalg.norm(system.rhs))
    for i, attempt in enumerate(attempts):
        last = i == len(attempts) - 1
        t0 = time.perf_counter()
        try:
            solver, fill = attempt(matrix, system)
        except RuntimeError as exc:
            if not last:
                continue
            raise FactorizationError(
                "global factorization failed: "
                f"n_trace={system.dof_map.n_trace}, n_rho={system.dof_map.n_rho}, "
                f"constrained={system.dof_map.constrained}, nnz={system.matrix.nnz}"
            ) from exc
        t1 = time.perf_counter()
        vec = solver(system.rhs)
        t2 = time.perf_counter()
        residual = float(np.linalg.norm(system.matrix @ vec - system.rhs)) / (norm_b or 1.0)
        system.stats.update(
            {
                "matrix_dim": int(system.matrix.shape[0]),
                "factor_nnz": int(fill),
                "factor_seconds": t1 - t0,
                "solve_seconds": t2 - t1,
                "residual": residual,
            }
        )
        if np.all(np.isfinite(vec)) and residual <= 1e-8:
            return vec
        if last:
            raise FactorizationError(
                f"global solve lost accuracy (residual {residual:.3e}): "
                f"n_trace={system.dof_map.n_trace}, n_rho={system.dof_map.n_rho}, "
                f"constrained={system.dof_map.constrained}, nnz={system.matrix.nnz}"
            )
    raise FactorizationError("no factorization backend available")


@dataclass
class SolutionFields:
    """Per-element coefficient arrays of the recovered fields."""

    mesh: Mesh
    degree: int
    viscosity: float
    mixed: np.ndarray      # (n_el, msd, nb) scaled strain unknown
    velocity: np.ndarray   # (n_el, dim, nb)
    pressure: np.ndarray   # (n_el, nb)
    zeta: np.ndarray       # (n_el,) local multipliers
    trace: dict            # face index -> (dim, n_face_basis)
    rho: np.ndarray        # (n_el,)
    multiplier: float | None = None


def reconstruct_all(system: TraceSystem, vec: np.ndarray,
                    problem=None) -> SolutionFields:
    """Recover all element fields from the trace solution.

    problem is only needed when the condensed elements were stripped of their
    recovery operators; the local systems are then reassembled on the fly.
    """
    mesh, dof_map = system.mesh, system.dof_map
    nel = mesh.n_elements
    first = system.condensed[0]
    nb = first.n_basis
    msd, dim = first.msd, first.dim
    ops = VoigtOps(dim, system.viscosity)
    mixed = np.empty((nel, msd, nb))
    velocity = np.empty((nel, dim, nb))
    pressure = np.empty((nel, nb))
    zeta = np.empty(nel)
    rho = np.empty(nel)
    trace = {}
    for fi, start in dof_map.face_offset.items():
        width = dof_map.face_width[fi]
        trace[fi] = vec[start:start + width].reshape(dim, width // dim)
    for ce in system.condensed:
        e = ce.element
        idx = dof_map.element_trace_dofs(ce)
        rho[e] = vec[dof_map.rho_index(e)]
        if ce.recovery_trace is not None:
            L, u, p, z = reconstruct(ce, vec[idx], rho[e])
        else:
            if problem is None:
                raise ValueError("recovery was stripped; reconstruct_all needs the problem")
            ctx = element_context(mesh, e, system.degree, system.order)
            ls = assemble_local(ctx, ops, ce.tau,
                                source=problem.source, dirichlet=problem.velocity)
            L, u, p, z = reconstruct_direct(ls, ops, vec[idx], rho[e])
        mixed[e], velocity[e], pressure[e], zeta[e] = L, u, p, z
    multiplier = float(vec[-1]) if dof_map.constrained else None
    return SolutionFields(
        mesh=mesh,
        degree=system.degree,
        viscosity=system.viscosity,
        mixed=mixed,
        velocity=velocity,
        pressure=pressure,
        zeta=zeta,
        trace=trace,
        rho=rho,
        multiplier=multiplier,
    )


def solve_stokes(mesh: Mesh, degree: int, tau: float, problem,
                 order: int | None = None):
    """Full pipeline: local assembly, condensation, global solve, recovery.

    problem supplies viscosity, source, velocity (used as Dirichlet datum)
    and traction(x, n) for Neumann faces.  Returns (SolutionFields, stats).
    """
    ops = VoigtOps(mesh.dim, problem.viscosity)
    t0 = time.perf_counter()
    condensed = []
    lean = False
    for e in range(mesh.n_elements):
        ctx = element_context(mesh, e, degree, order)
        ls = assemble_local(ctx, ops, tau, source=problem.source, dirichlet=problem.velocity)
        ce = condense(ls, ops)
        if e == 0:
            lean = ce.recovery_trace.nbytes * mesh.n_elements > _LEAN_RECOVERY_BYTES
        if lean:
            ce.strip_recovery()
        condensed.append(ce)
    t1 = time.perf_counter()
    system = assemble_global(
        mesh, condensed, degree, viscosity=problem.viscosity,
        traction=problem.traction, order=order, consume=lean,
    )
    if not mesh.tagged_faces(NEUMANN):
        system = enforce_pure_dirichlet(system)
    t2 = time.perf_counter()
    vec = solve_trace_system(system)
    fields = reconstruct_all(system, vec, problem=problem)
    system.stats["local_seconds"] = t1 - t0
    system.stats["global_assembly_seconds"] = t2 - t1
    return fields, system.stats
