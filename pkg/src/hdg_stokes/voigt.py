"""Voigt storage of symmetric second-order tensors and the operator algebra.

A symmetric tensor in nsd dimensions is stored as a vector of
msd = nsd (nsd + 1) / 2 components, ordered (11, 22, 12) in 2D and
(11, 22, 33, 12, 13, 23) in 3D.  Off-diagonal strain components are stored
unhalved (engineering shear), so recovering the tensor halves them again.
The module also provides the boundary operators built from a unit normal and
quadrature checks of the integration-by-parts identities the scheme rests on.
"""

from __future__ import annotations

import numpy as np

from .ref_element import (
    MappedCell,
    MappedFace,
    canonical_face,
    cell_basis,
    cell_dim,
    cell_vertices,
    face_basis,
    local_faces,
)


class VoigtOps:
    """Operator tables for one spatial dimension and viscosity."""

    def __init__(self, dim: int, viscosity: float = 1.0):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if not viscosity > 0.0:
            raise ValueError("viscosity must be positive")
        self.dim = dim
        self.viscosity = float(viscosity)
        self.msd = dim * (dim + 1) // 2
        self.nrr = dim * (dim - 1) // 2
        if dim == 2:
            self.pairs = ((0, 0), (1, 1), (0, 1))
        else:
            self.pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
        self.ones_diag = np.array([1.0] * dim + [0.0] * (self.msd - dim))
        d = np.array([2.0 * viscosity] * dim + [viscosity] * (self.msd - dim))
        self.d_diag = d
        self.d_sqrt = np.sqrt(d)

    # tensor <-> Voigt conversions ------------------------------------------

    def tensor_to_voigt(self, tensor) -> np.ndarray:
        """Symmetric tensor (..., dim, dim) to Voigt vector (..., msd)."""
        t = np.asarray(tensor)
        out = np.empty(t.shape[:-2] + (self.msd,), dtype=t.dtype)
        for I, (i, j) in enumerate(self.pairs):
            out[..., I] = t[..., i, j] if i == j else t[..., i, j] + t[..., j, i]
        return out

    def voigt_to_tensor(self, voigt) -> np.ndarray:
        v = np.asarray(voigt)
        out = np.zeros(v.shape[:-1] + (self.dim, self.dim), dtype=v.dtype)
        for I, (i, j) in enumerate(self.pairs):
            if i == j:
                out[..., i, i] = v[..., I]
            else:
                out[..., i, j] = 0.5 * v[..., I]
                out[..., j, i] = 0.5 * v[..., I]
        return out

    def strain_from_gradient(self, grad) -> np.ndarray:
        """Voigt strain rate from a velocity Jacobian (..., dim, dim).

        grad[..., i, j] holds du_i/dx_j; off-diagonal entries come out as
        du_i/dx_j + du_j/dx_i (not halved).
        """
        g = np.asarray(grad)
        out = np.empty(g.shape[:-2] + (self.msd,), dtype=g.dtype)
        for I, (i, j) in enumerate(self.pairs):
            out[..., I] = g[..., i, i] if i == j else g[..., i, j] + g[..., j, i]
        return out

    def rotation_from_gradient(self, grad) -> np.ndarray:
        """Vorticity components from a velocity Jacobian: curl in 3D,
        the scalar du_2/dx_1 - du_1/dx_2 in 2D."""
        g = np.asarray(grad)
        if self.dim == 2:
            return (g[..., 1, 0] - g[..., 0, 1])[..., None]
        return np.stack(
            [
                g[..., 2, 1] - g[..., 1, 2],
                g[..., 0, 2] - g[..., 2, 0],
                g[..., 1, 0] - g[..., 0, 1],
            ],
            axis=-1,
        )

    def divergence_from_gradient(self, grad) -> np.ndarray:
        return np.trace(np.asarray(grad), axis1=-2, axis2=-1)

    # basis-function operator rows ------------------------------------------

    def strain_rows(self, grads) -> np.ndarray:
        """Strain-operator rows of basis gradients.

        grads has shape (..., dim); the result (..., msd, dim) maps the
        component index c of a vector basis function to its Voigt strain row.
        """
        g = np.asarray(grads)
        out = np.zeros(g.shape[:-1] + (self.msd, self.dim), dtype=g.dtype)
        for I, (i, j) in enumerate(self.pairs):
            if i == j:
                out[..., I, i] = g[..., i]
            else:
                out[..., I, i] = g[..., j]
                out[..., I, j] = g[..., i]
        return out

    def rotation_rows(self, grads) -> np.ndarray:
        """Rotation-operator rows (..., nrr, dim) of basis gradients."""
        g = np.asarray(grads)
        out = np.zeros(g.shape[:-1] + (self.nrr, self.dim), dtype=g.dtype)
        if self.dim == 2:
            out[..., 0, 0] = -g[..., 1]
            out[..., 0, 1] = g[..., 0]
        else:
            out[..., 0, 1] = -g[..., 2]
            out[..., 0, 2] = g[..., 1]
            out[..., 1, 0] = g[..., 2]
            out[..., 1, 2] = -g[..., 0]
            out[..., 2, 0] = -g[..., 1]
            out[..., 2, 1] = g[..., 0]
        return out

    # boundary operators -----------------------------------------------------

    def _check_unit(self, n):
        norms = np.linalg.norm(n, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("normals must be unit vectors")

    def normal_matrix(self, normal) -> np.ndarray:
        """Voigt normal operator N of shape (..., msd, dim); its transpose
        contracts a Voigt stress into the boundary traction."""
        n = np.asarray(normal, dtype=float)
        self._check_unit(n)
        out = np.zeros(n.shape[:-1] + (self.msd, self.dim))
        for I, (i, j) in enumerate(self.pairs):
            if i == j:
                out[..., I, i] = n[..., i]
            else:
                out[..., I, i] = n[..., j]
                out[..., I, j] = n[..., i]
        return out

    def tangent_matrix(self, normal) -> np.ndarray:
        """Tangential operator T of shape (..., dim, nrr).

        In 2D, T = (n2, -n1); in 3D, T x = n x (cross product).  T is linear
        in the normal, so T(-n) = -T(n).
        """
        n = np.asarray(normal, dtype=float)
        self._check_unit(n)
        out = np.zeros(n.shape[:-1] + (self.dim, self.nrr))
        if self.dim == 2:
            out[..., 0, 0] = n[..., 1]
            out[..., 1, 0] = -n[..., 0]
        else:
            out[..., 0, 1] = -n[..., 2]
            out[..., 0, 2] = n[..., 1]
            out[..., 1, 0] = n[..., 2]
            out[..., 1, 2] = -n[..., 0]
            out[..., 2, 0] = -n[..., 1]
            out[..., 2, 1] = n[..., 0]
        return out


# integration-by-parts identity checks --------------------------------------

def _complex_step_jacobian(fn, x, h=1e-100):
    """Jacobian of fn at rows of x via complex-step differentiation."""
    x = np.asarray(x, dtype=float)
    base = np.asarray(fn(x))
    out = np.empty(base.shape + (x.shape[1],))
    for j in range(x.shape[1]):
        xc = x.astype(complex)
        xc[:, j] += 1j * h
        out[..., j] = np.imag(fn(xc)) / h
    return out


def _standalone_element(element_type, vertex_coords, order):
    cb = cell_basis(element_type, 1, order)
    cell = MappedCell(cb, vertex_coords)
    faces = []
    for lv in local_faces(element_type):
        # face_basis expects corners in the face reference node layout
        corners = canonical_face(lv)
        fb = face_basis(element_type, 1, 1, order, corners)
        faces.append(MappedFace(fb, np.asarray(vertex_coords)[list(corners)], cell.centroid))
    return cell, faces


def gauss_residual(element_type, vertex_coords, ops: VoigtOps, stress_fn, vector_fn,
                   order: int = 12) -> float:
    """Residual of the divergence-theorem identity for Voigt fields.

    Checks, by quadrature on a single element, that the boundary term
    (N^T sigma) . v equals the volume terms sigma . (strain of v) plus
    (Voigt divergence of sigma) . v.  Field derivatives are taken by
    complex step, so polynomial data is differentiated to machine accuracy.
    """
    cell, faces = _standalone_element(element_type, vertex_coords, order)
    sig = np.asarray(stress_fn(cell.x))
    v = np.asarray(vector_fn(cell.x))
    jac_v = _complex_step_jacobian(vector_fn, cell.x)
    jac_sig = _complex_step_jacobian(stress_fn, cell.x)
    strain_v = ops.strain_from_gradient(jac_v)
    div_sig = np.zeros_like(v)
    for I, (i, j) in enumerate(ops.pairs):
        if i == j:
            div_sig[:, i] += jac_sig[:, I, i]
        else:
            div_sig[:, i] += jac_sig[:, I, j]
            div_sig[:, j] += jac_sig[:, I, i]
    volume = float(np.einsum("q,qI,qI->", cell.wdet, sig, strain_v))
    volume += float(np.einsum("q,qi,qi->", cell.wdet, div_sig, v))
    boundary = 0.0
    for mf in faces:
        nmat = ops.normal_matrix(mf.normal)
        sig_f = np.asarray(stress_fn(mf.x))
        v_f = np.asarray(vector_fn(mf.x))
        traction = np.einsum("qIi,qI->qi", nmat, sig_f)
        boundary += float(np.einsum("q,qi,qi->", mf.w, traction, v_f))
    return abs(boundary - volume)


def stokes_residual(element_type, vertex_coords, ops: VoigtOps, vector_fn,
                    order: int = 12) -> float:
    """Residual of the curl-theorem identity linking vorticity to circulation.

    The volume integral of the rotation operator applied to v is compared
    with the boundary circulation of v taken along the positively oriented
    boundary; with the sign convention of ``tangent_matrix`` that circulation
    is the flux of v through T evaluated at the inward normal.
    """
    cell, faces = _standalone_element(element_type, vertex_coords, order)
    jac_v = _complex_step_jacobian(vector_fn, cell.x)
    rot = ops.rotation_from_gradient(jac_v)
    volume = np.einsum("q,qr->r", cell.wdet, rot)
    circ = boundary_circulation(faces, ops, vector_fn)
    return float(np.linalg.norm(volume - circ))


def boundary_circulation(faces, ops: VoigtOps, vector_fn) -> np.ndarray:
    """Circulation of a vector field along an element's oriented boundary."""
    circ = np.zeros(ops.nrr)
    for mf in faces:
        tmat = ops.tangent_matrix(-mf.normal)
        v_f = np.asarray(vector_fn(mf.x))
        circ += np.einsum("q,qi,qir->r", mf.w, v_f, tmat)
    return circ
