"""Reference cells, nodal Lagrange bases, quadrature rules and physical mappings.

Supported cells: line [-1, 1], triangle {(0,0), (1,0), (0,1)}, quad [-1, 1]^2,
unit tetrahedron and hex [-1, 1]^3.  Simplices carry the complete polynomial
space of the requested degree, tensor-product cells carry the tensor-product
space of the same degree.  Nodal sets are equispaced, which is adequate for
the low degrees supported here.

Basis functions are represented in a scaled Legendre product basis (well
conditioned on equispaced nodes up to the supported degrees) and converted to
the Lagrange basis through the inverse of the generalized Vandermonde matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from numpy.polynomial import legendre as _leg
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 5
MAX_QUADRATURE_ORDER = 30

_CELL_DIM = {"line": 1, "tri": 2, "quad": 2, "tet": 3, "hex": 3}
_TENSOR_CELLS = {"line", "quad", "hex"}
_FACE_TYPE = {"tri": "line", "quad": "line", "tet": "tri", "hex": "quad"}
_REFERENCE_MEASURE = {"line": 2.0, "tri": 0.5, "quad": 4.0, "tet": 1.0 / 6.0, "hex": 8.0}

_VERTICES = {
    "line": np.array([[-1.0], [1.0]]),
    "tri": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    "quad": np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]),
    "tet": np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    "hex": np.array(
        [
            [-1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [1.0, -1.0, 1.0],
            [-1.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
    ),
}

# local faces as tuples of local vertex ids; quad faces of the hex are listed
# in cyclic order so that consecutive vertices share an edge
_LOCAL_FACES = {
    "tri": ((0, 1), (1, 2), (2, 0)),
    "quad": ((0, 1), (1, 3), (3, 2), (2, 0)),
    "tet": ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)),
    "hex": (
        (0, 1, 3, 2),
        (4, 5, 7, 6),
        (0, 1, 5, 4),
        (2, 3, 7, 6),
        (0, 2, 6, 4),
        (1, 3, 7, 5),
    ),
}


class GeometryError(ValueError):
    """Raised when an element mapping degenerates (non-positive Jacobian)."""


def supported_cells():
    return tuple(_CELL_DIM)


def cell_dim(element_type: str) -> int:
    _check_cell(element_type)
    return _CELL_DIM[element_type]

def face_type(element_type: str) -> str:
    _check_cell(element_type)
    return _FACE_TYPE[element_type]

def cell_vertices(element_type: str) -> np.ndarray:
    _check_cell(element_type)
    return _VERTICES[element_type].copy()

def local_faces(element_type: str):
    _check_cell(element_type)
    return _LOCAL_FACES[element_type]

def reference_measure(element_type: str) -> float:
    _check_cell(element_type)
    return _REFERENCE_MEASURE[element_type]


def _check_cell(element_type):
    if element_type not in _CELL_DIM:
        raise ValueError(f"unsupported element type {element_type!r}")


def canonical_face(vertex_ids) -> tuple:
    """Orientation-independent ordering of a face vertex tuple.

    Line and triangle faces are sorted ascending.  Quadrilateral faces (given
    in cyclic order) are rotated to start at the smallest id, reflected so the
    walk continues towards the smaller neighbour, and finally reordered to the
    reference node layout of the quad (corner (+1,+1) last).  Both elements
    sharing a face therefore derive the same tuple, which fixes a common
    parametrization for trace unknowns.
    """
    ids = tuple(int(v) for v in vertex_ids)
    if len(ids) in (2, 3):
        return tuple(sorted(ids))
    if len(ids) != 4:
        raise ValueError(f"faces must have 2 to 4 vertices, got {len(ids)}")
    i = ids.index(min(ids))
    if ids[(i + 1) % 4] <= ids[i - 1]:
        cyc = (ids[i], ids[(i + 1) % 4], ids[(i + 2) % 4], ids[(i + 3) % 4])
    else:
        cyc = (ids[i], ids[i - 1], ids[i - 2], ids[i - 3])
    return (cyc[0], cyc[1], cyc[3], cyc[2])


def _simplex_nodes(dim, degree):
    k = degree
    pts = []
    if dim == 2:
        for j in range(k + 1):
            for i in range(k + 1 - j):
                pts.append((i / k, j / k))
    else:
        for l in range(k + 1):
            for j in range(k + 1 - l):
                for i in range(k + 1 - l - j):
                    pts.append((i / k, j / k, l / k))
    return np.array(pts)


def _tensor_nodes(dim, degree):
    p = np.linspace(-1.0, 1.0, degree + 1)
    if dim == 1:
        return p[:, None].copy()
    if dim == 2:
        return np.array([(p[i], p[j]) for j in range(degree + 1) for i in range(degree + 1)])
    return np.array(
        [
            (p[i], p[j], p[l])
            for l in range(degree + 1)
            for j in range(degree + 1)
            for i in range(degree + 1)
        ]
    )


def _exponents(element_type, degree):
    dim = _CELL_DIM[element_type]
    if element_type in _TENSOR_CELLS:
        return [e[::-1] for e in product(range(degree + 1), repeat=dim)]
    if dim == 2:
        return [(a, b) for b in range(degree + 1) for a in range(degree + 1 - b)]
    return [
        (a, b, c)
        for c in range(degree + 1)
        for b in range(degree + 1 - c)
        for a in range(degree + 1 - c - b)
    ]


def _legendre_tables(s, kmax):
    """Values and derivatives of P_0..P_kmax at points s, shapes (npts, kmax+1)."""
    vals = _leg.legvander(s, kmax)
    ders = np.zeros_like(vals)
    for n in range(1, kmax + 1):
        c = np.zeros(n + 1)
        c[n] = 1.0
        ders[:, n] = _leg.legval(s, _leg.legder(c))
    return vals, ders


class ReferenceElement:
    """Nodal Lagrange basis of a fixed degree on one reference cell."""

    def __init__(self, element_type: str, degree: int):
        _check_cell(element_type)
        if not 1 <= degree <= MAX_DEGREE:
            raise ValueError(
                f"unsupported degree {degree} for {element_type!r} (need 1..{MAX_DEGREE})"
            )
        self.element_type = element_type
        self.degree = degree
        self.dim = _CELL_DIM[element_type]
        self.exponents = _exponents(element_type, degree)
        if element_type in _TENSOR_CELLS:
            self.nodes = _tensor_nodes(self.dim, degree)
            # coordinates already live on [-1, 1]
            self._shift, self._scale = 0.0, 1.0
        else:
            self.nodes = _simplex_nodes(self.dim, degree)
            self._shift, self._scale = -1.0, 2.0
        self.num_basis = len(self.nodes)
        vander = self._poly_values(self.nodes)
        self._dual = np.linalg.inv(vander)

    @property
    def vertices(self):
        return _VERTICES[self.element_type]

    @property
    def face_type(self):
        return _FACE_TYPE.get(self.element_type)

    def _tables(self, points):
        s = self._scale * np.asarray(points) + self._shift
        vals, ders = [], []
        for ax in range(self.dim):
            v, d = _legendre_tables(s[:, ax], self.degree)
            vals.append(v)
            ders.append(d * self._scale)
        return vals, ders

    def _poly_values(self, points):
        vals, _ = self._tables(points)
        out = np.ones((len(points), len(self.exponents)))
        for m, exp in enumerate(self.exponents):
            for ax, e in enumerate(exp):
                out[:, m] *= vals[ax][:, e]
        return out

    def eval_basis(self, points) -> np.ndarray:
        """Basis values at reference points, shape (npts, num_basis)."""
        points = np.atleast_2d(points)
        return self._poly_values(points) @ self._dual

    def eval_grad(self, points) -> np.ndarray:
        """Basis gradients at reference points, shape (npts, num_basis, dim)."""
        points = np.atleast_2d(points)
        vals, ders = self._tables(points)
        npts, nm = len(points), len(self.exponents)
        dmono = np.empty((npts, nm, self.dim))
        for m, exp in enumerate(self.exponents):
            for ax in range(self.dim):
                col = ders[ax][:, exp[ax]].copy()
                for other in range(self.dim):
                    if other != ax:
                        col *= vals[other][:, exp[other]]
                dmono[:, m, ax] = col
        return np.tensordot(dmono, self._dual, axes=([1], [0])).transpose(0, 2, 1)


@lru_cache(maxsize=None)
def build_reference_element(element_type: str, degree: int) -> ReferenceElement:
    """Build (and cache) the reference element for one cell type and degree.

    Parameters
    ----------
    element_type : str
        One of 'line', 'tri', 'quad', 'tet', 'hex'.
    degree : int
        Polynomial degree, 1 to 5.
    """
    return ReferenceElement(element_type, degree)


@dataclass(frozen=True)
class QuadratureRule:
    element_type: str
    order: int
    points: np.ndarray
    weights: np.ndarray


def _gauss01(n):
    # Gauss-Legendre on [0, 1]
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0

def _jacobi01(n, alpha):
    # nodes/weights with weight (1-t)^alpha on [0, 1]
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def build_quadrature(element_type: str, order: int) -> QuadratureRule:
    """Quadrature rule exact for polynomials up to the given total degree.

    Tensor-product cells get tensorized Gauss-Legendre (exact per direction).
    Simplices use collapsed-coordinate Gauss-Jacobi rules, exact for complete
    polynomials of the requested total degree.
    """
    _check_cell(element_type)
    if not 1 <= order <= MAX_QUADRATURE_ORDER:
        raise ValueError(
            f"quadrature order {order} outside supported range 1..{MAX_QUADRATURE_ORDER}"
        )
    n = (order + 2) // 2
    if element_type in _TENSOR_CELLS:
        x, w = roots_legendre(n)
        dim = _CELL_DIM[element_type]
        pts = np.array([p[::-1] for p in product(x, repeat=dim)])
        wts = np.array([np.prod(c) for c in product(w, repeat=dim)])
    elif element_type == "tri":
        xg, wg = _gauss01(n)
        yj, wj = _jacobi01(n, 1.0)
        pts, wts = [], []
        for j in range(n):
            for i in range(n):
                pts.append((xg[i] * (1.0 - yj[j]), yj[j]))
                wts.append(wg[i] * wj[j])
        pts, wts = np.array(pts), np.array(wts)
    else:  # tet
        xg, wg = _gauss01(n)
        yj, wj = _jacobi01(n, 1.0)
        zj, wz = _jacobi01(n, 2.0)
        pts, wts = [], []
        for l in range(n):
            for j in range(n):
                for i in range(n):
                    pts.append(
                        (
                            xg[i] * (1.0 - yj[j]) * (1.0 - zj[l]),
                            yj[j] * (1.0 - zj[l]),
                            zj[l],
                        )
                    )
                    wts.append(wg[i] * wj[j] * wz[l])
        pts, wts = np.array(pts), np.array(wts)
    return QuadratureRule(element_type, order, pts, wts)


@dataclass(frozen=True)
class PhysicalMap:
    x: np.ndarray          # (npts, dim) physical coordinates
    jacobian: np.ndarray   # (npts, dim, dim)
    det: np.ndarray        # (npts,)
    inverse: np.ndarray    # (npts, dim, dim), inverse of the Jacobian


def map_physical(vertex_coords, geometry: ReferenceElement, points) -> PhysicalMap:
    """Map reference points through the (multi)linear vertex geometry.

    Parameters
    ----------
    vertex_coords : (n_vertices, dim) array
        Physical vertex coordinates, ordered like ``geometry.nodes``.
    geometry : ReferenceElement
        Degree-1 element of the matching cell type.
    points : (npts, dim) array
        Reference coordinates to map.
    """
    X = np.asarray(vertex_coords, dtype=float)
    vals = geometry.eval_basis(points)
    grads = geometry.eval_grad(points)
    x = vals @ X
    jac = np.einsum("qaj,ai->qij", grads, X)
    det = np.linalg.det(jac)
    if np.any(det <= 0.0):
        raise GeometryError(f"non-positive Jacobian determinant (min {det.min():.3e})")
    return PhysicalMap(x=x, jacobian=jac, det=det, inverse=np.linalg.inv(jac))


@dataclass(frozen=True)
class CellBasis:
    """Reference-space tabulation shared by all elements of one type."""

    element_type: str
    degree: int
    order: int
    ref: ReferenceElement
    geo: ReferenceElement
    quad: QuadratureRule
    vals: np.ndarray       # (nq, nb)
    grads_ref: np.ndarray  # (nq, nb, dim)


@lru_cache(maxsize=None)
def cell_basis(element_type: str, degree: int, order: int) -> CellBasis:
    ref = build_reference_element(element_type, degree)
    geo = build_reference_element(element_type, 1)
    quad = build_quadrature(element_type, order)
    return CellBasis(
        element_type=element_type,
        degree=degree,
        order=order,
        ref=ref,
        geo=geo,
        quad=quad,
        vals=ref.eval_basis(quad.points),
        grads_ref=ref.eval_grad(quad.points),
    )


class MappedCell:
    """One element's quadrature data: points, weights and physical gradients."""

    def __init__(self, basis: CellBasis, vertex_coords):
        self.basis = basis
        self.vertex_coords = np.asarray(vertex_coords, dtype=float)
        pm = map_physical(self.vertex_coords, basis.geo, basis.quad.points)
        self.x = pm.x
        self.wdet = basis.quad.weights * pm.det
        self.vals = basis.vals
        # d/dx_i = sum_j (dN/dxi_j) (J^{-1})_{ji}
        self.grads = np.einsum("qbj,qji->qbi", basis.grads_ref, pm.inverse)
        self.volume = float(self.wdet.sum())
        self.centroid = self.vertex_coords.mean(axis=0)

    @property
    def num_basis(self):
        return self.basis.ref.num_basis


@dataclass(frozen=True)
class FaceBasis:
    """Reference-space tabulation for one face seen from one element side.

    ``corners`` holds the element-local vertex ids of the face in canonical
    order, which pins the shared parametrization of the trace space.
    """

    element_type: str
    cell_degree: int
    face_degree: int
    order: int
    corners: tuple
    quad: QuadratureRule
    face_ref: ReferenceElement
    geo_vals: np.ndarray      # face geometry basis at face qps, (nq, n_fv)
    geo_grads: np.ndarray     # (nq, n_fv, dim-1)
    trace_vals: np.ndarray    # cell basis traced onto the face, (nq, nb_cell)
    facefun_vals: np.ndarray  # face basis, (nq, nb_face)


@lru_cache(maxsize=None)
def face_basis(element_type, cell_degree, face_degree, order, corners) -> FaceBasis:
    ftype = _FACE_TYPE[element_type]
    quad = build_quadrature(ftype, order)
    face_ref = build_reference_element(ftype, face_degree)
    face_geo = build_reference_element(ftype, 1)
    cell_geo = build_reference_element(element_type, 1)
    cell_ref = build_reference_element(element_type, cell_degree)
    geo_vals = face_geo.eval_basis(quad.points)
    geo_grads = face_geo.eval_grad(quad.points)
    ref_corners = cell_geo.nodes[list(corners)]
    xi_cell = geo_vals @ ref_corners
    return FaceBasis(
        element_type=element_type,
        cell_degree=cell_degree,
        face_degree=face_degree,
        order=order,
        corners=tuple(corners),
        quad=quad,
        face_ref=face_ref,
        geo_vals=geo_vals,
        geo_grads=geo_grads,
        trace_vals=cell_ref.eval_basis(xi_cell),
        facefun_vals=face_ref.eval_basis(quad.points),
    )


class MappedFace:
    """Face quadrature data: points, scaled weights and the outward normal."""

    def __init__(self, basis: FaceBasis, face_vertex_coords, cell_centroid):
        self.basis = basis
        Xf = np.asarray(face_vertex_coords, dtype=float)
        self.x = basis.geo_vals @ Xf
        tang = np.einsum("qfj,fi->qij", basis.geo_grads, Xf)
        if tang.shape[2] == 1:
            t = tang[:, :, 0]
            measure = np.linalg.norm(t, axis=1)
            raw = np.stack([t[:, 1], -t[:, 0]], axis=1)
        else:
            raw = np.cross(tang[:, :, 0], tang[:, :, 1])
            measure = np.linalg.norm(raw, axis=1)
        if np.any(measure <= 0.0):
            raise GeometryError("degenerate face parametrization")
        normal = raw / measure[:, None]
        outward = self.x.mean(axis=0) - np.asarray(cell_centroid)
        if float(normal.mean(axis=0) @ outward) < 0.0:
            normal = -normal
        self.normal = normal
        self.w = basis.quad.weights * measure
        self.trace_vals = basis.trace_vals
        self.facefun_vals = basis.facefun_vals
        self.area = float(self.w.sum())
