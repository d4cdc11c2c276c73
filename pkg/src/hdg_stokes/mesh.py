"""Structured meshes of axis-aligned boxes with full face adjacency.

Families
--------
quad : n x n quadrilaterals
tri1 : each grid cell split into 4 triangles through its barycenter
tri2 : each grid cell split into 2 triangles along the lower-left to
       upper-right diagonal
hex  : n x n x n hexahedra
tet  : each grid cell split into 6 tetrahedra sharing the main diagonal
       (Kuhn subdivision, orientation-consistent across neighbouring cells)

Every interior face is shared by exactly two elements; boundary faces carry a
'dirichlet' or 'neumann' tag (all Dirichlet until reclassified).  Face vertex
tuples are stored in a canonical, orientation-independent order so that the
two adjacent elements agree on the parametrization of the face.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import permutations

import numpy as np

from .ref_element import canonical_face, local_faces

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

FAMILIES = {"quad": 2, "tri1": 2, "tri2": 2, "hex": 3, "tet": 3}
_FAMILY_CELL = {"quad": "quad", "tri1": "tri", "tri2": "tri", "hex": "hex", "tet": "tet"}


@dataclass(frozen=True)
class Face:
    """One mesh face with adjacency and boundary tag.

    nodes holds global vertex ids in canonical order; left_corners and
    right_corners hold the matching element-local vertex ids, which is all an
    element needs to parametrize the face consistently with its neighbour.
    """

    nodes: tuple
    left: int
    left_local: int
    left_corners: tuple
    right: int | None = None
    right_local: int | None = None
    right_corners: tuple | None = None
    tag: str | None = None

    @property
    def is_boundary(self):
        return self.right is None


class Mesh:
    """Immutable unstructured view: nodes, elements, faces, adjacency."""

    def __init__(self, dim, nodes, elements):
        self.dim = int(dim)
        self.nodes = np.asarray(nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != self.dim:
            raise ValueError("node array must have shape (n_nodes, dim)")
        self.elements = [(etype, tuple(int(v) for v in conn)) for etype, conn in elements]
        self.faces, self.element_faces = self._build_faces()

    def _build_faces(self):
        registry = {}
        faces = []
        element_faces = [[] for _ in self.elements]
        for e, (etype, conn) in enumerate(self.elements):
            for lf, lv in enumerate(local_faces(etype)):
                gids = tuple(conn[v] for v in lv)
                canon = canonical_face(gids)
                pos = {g: v for g, v in zip(gids, lv)}
                corners = tuple(pos[g] for g in canon)
                key = tuple(sorted(canon))
                if key not in registry:
                    registry[key] = len(faces)
                    faces.append(
                        Face(nodes=canon, left=e, left_local=lf, left_corners=corners)
                    )
                else:
                    fi = registry[key]
                    f = faces[fi]
                    if f.right is not None:
                        raise ValueError(f"face {key} shared by more than two elements")
                    faces[fi] = replace(f, right=e, right_local=lf, right_corners=corners)
                element_faces[e].append(registry[key])
        faces = [f if not f.is_boundary else replace(f, tag=DIRICHLET) for f in faces]
        return faces, element_faces

    @classmethod
    def _from_parts(cls, dim, nodes, elements, faces, element_faces):
        m = cls.__new__(cls)
        m.dim, m.nodes, m.elements = dim, nodes, elements
        m.faces, m.element_faces = faces, element_faces
        return m

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def element_coords(self, e) -> np.ndarray:
        _, conn = self.elements[e]
        return self.nodes[list(conn)]

    def face_coords(self, fi) -> np.ndarray:
        return self.nodes[list(self.faces[fi].nodes)]

    def face_centroid(self, fi) -> np.ndarray:
        return self.face_coords(fi).mean(axis=0)

    def internal_faces(self):
        return [i for i, f in enumerate(self.faces) if not f.is_boundary]

    def boundary_faces(self):
        return [i for i, f in enumerate(self.faces) if f.is_boundary]

    def tagged_faces(self, tag):
        return [i for i, f in enumerate(self.faces) if f.tag == tag]

    def corners_for(self, fi, element):
        f = self.faces[fi]
        if element == f.left:
            return f.left_corners
        if element == f.right:
            return f.right_corners
        raise ValueError(f"element {element} not adjacent to face {fi}")


def generate_cartesian_mesh(domain, n: int, family: str) -> Mesh:
    """Uniform mesh of an axis-aligned box.

    Parameters
    ----------
    domain : sequence of (lo, hi) pairs
        Box extents per axis; the length must match the family dimension.
    n : int
        Number of subdivisions per axis, at least 1.
    family : str
        One of 'quad', 'tri1', 'tri2', 'hex', 'tet'.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown mesh family {family!r}")
    dim = FAMILIES[family]
    domain = [(float(lo), float(hi)) for lo, hi in domain]
    if len(domain) != dim:
        raise ValueError(f"family {family!r} needs a {dim}D domain, got {len(domain)} axes")
    if n < 1:
        raise ValueError("n must be at least 1")
    for lo, hi in domain:
        if not hi > lo:
            raise ValueError("domain extents must satisfy hi > lo")

    axes = [np.linspace(lo, hi, n + 1) for lo, hi in domain]
    if dim == 2:
        nodes = [(x, y) for y in axes[1] for x in axes[0]]
    else:
        nodes = [(x, y, z) for z in axes[2] for y in axes[1] for x in axes[0]]
    nodes = np.array(nodes)

    def vid(i, j, l=0):
        return (l * (n + 1) + j) * (n + 1) + i

    elements = []
    if family == "quad":
        for j in range(n):
            for i in range(n):
                elements.append(
                    ("quad", (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)))
                )
    elif family == "tri2":
        for j in range(n):
            for i in range(n):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                elements.append(("tri", (a, b, c)))
                elements.append(("tri", (a, c, d)))
    elif family == "tri1":
        centers = []
        extra = []
        for j in range(n):
            for i in range(n):
                cx = 0.5 * (axes[0][i] + axes[0][i + 1])
                cy = 0.5 * (axes[1][j] + axes[1][j + 1])
                centers.append(len(nodes) + len(extra))
                extra.append((cx, cy))
        nodes = np.vstack([nodes, np.array(extra)])
        for j in range(n):
            for i in range(n):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                m = centers[j * n + i]
                elements.append(("tri", (a, b, m)))
                elements.append(("tri", (b, c, m)))
                elements.append(("tri", (c, d, m)))
                elements.append(("tri", (d, a, m)))
    elif family == "hex":
        for l in range(n):
            for j in range(n):
                for i in range(n):
                    elements.append(
                        (
                            "hex",
                            (
                                vid(i, j, l),
                                vid(i + 1, j, l),
                                vid(i, j + 1, l),
                                vid(i + 1, j + 1, l),
                                vid(i, j, l + 1),
                                vid(i + 1, j, l + 1),
                                vid(i, j + 1, l + 1),
                                vid(i + 1, j + 1, l + 1),
                            ),
                        )
                    )
    else:  # tet
        unit = np.eye(3, dtype=int)
        paths = []
        for perm in permutations(range(3)):
            corners = [np.zeros(3, dtype=int)]
            for ax in perm:
                corners.append(corners[-1] + unit[ax])
            inversions = sum(
                1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b]
            )
            if inversions % 2 == 1:
                # swap two vertices to keep the Jacobian positive
                corners[1], corners[2] = corners[2], corners[1]
            paths.append(corners)
        for l in range(n):
            for j in range(n):
                for i in range(n):
                    base = np.array([i, j, l])
                    for corners in paths:
                        conn = tuple(vid(*(base + c)) for c in corners)
                        elements.append(("tet", conn))

    return Mesh(dim, nodes, elements)


def classify_boundary(mesh: Mesh, neumann_predicate) -> Mesh:
    """Retag boundary faces: 'neumann' where the centroid predicate holds.

    Returns a new Mesh sharing nodes and elements with the input; interior
    faces keep tag None.
    """
    faces = []
    for i, f in enumerate(mesh.faces):
        if f.is_boundary:
            tag = NEUMANN if neumann_predicate(mesh.face_centroid(i)) else DIRICHLET
            faces.append(replace(f, tag=tag))
        else:
            faces.append(f)
    return Mesh._from_parts(mesh.dim, mesh.nodes, mesh.elements, faces, mesh.element_faces)


def family_cell(family: str) -> str:
    if family not in _FAMILY_CELL:
        raise ValueError(f"unknown mesh family {family!r}")
    return _FAMILY_CELL[family]
