"""Mesh and field export: JSON descriptions and legacy ASCII VTK files.

Discontinuous fields are written on a broken grid (element vertices
duplicated per element) so inter-element jumps survive in the output.  All
floats are printed with 17 significant digits, which round-trips double
precision exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .mesh import Mesh
from .ref_element import build_reference_element

_VTK_CELL_TYPE = {"tri": 5, "quad": 9, "tet": 10, "hex": 12}
# our tensor cells store vertices lexicographically; VTK wants a cyclic walk
_VTK_PERM = {
    "tri": (0, 1, 2),
    "quad": (0, 1, 3, 2),
    "tet": (0, 1, 2, 3),
    "hex": (0, 1, 3, 2, 4, 5, 7, 6),
}


def _fmt(x):
    return f"{float(x):.17g}"


def mesh_to_json(mesh: Mesh, path):
    payload = {
        "dim": mesh.dim,
        "nodes": [[float(c) for c in row] for row in mesh.nodes],
        "elements": [
            {"type": etype, "nodes": list(conn)} for etype, conn in mesh.elements
        ],
        "faces": [
            {
                "nodes": list(f.nodes),
                "left": f.left,
                "left_local": f.left_local,
                "right": f.right,
                "right_local": f.right_local,
                "tag": f.tag,
            }
            for f in mesh.faces
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_vtk_header(fh, title, points):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(f"{title}\n")
    fh.write("ASCII\n")
    fh.write("DATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {len(points)} double\n")
    for p in points:
        x, y = p[0], p[1]
        z = p[2] if len(p) > 2 else 0.0
        fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def _write_vtk_cells(fh, cells, types):
    total = sum(len(c) + 1 for c in cells)
    fh.write(f"CELLS {len(cells)} {total}\n")
    for c in cells:
        fh.write(" ".join(str(v) for v in (len(c), *c)) + "\n")
    fh.write(f"CELL_TYPES {len(cells)}\n")
    for t in types:
        fh.write(f"{t}\n")


def mesh_to_vtk(mesh: Mesh, path, title="mesh"):
    cells, types = [], []
    for etype, conn in mesh.elements:
        perm = _VTK_PERM[etype]
        cells.append([conn[i] for i in perm])
        types.append(_VTK_CELL_TYPE[etype])
    with open(path, "w") as fh:
        _write_vtk_header(fh, title, mesh.nodes)
        _write_vtk_cells(fh, cells, types)


def fields_to_vtk(fields, path, post=None, title="stokes fields"):
    """Write velocity, pressure (and postprocessed velocity) on a broken grid."""
    mesh = fields.mesh
    points, cells, types = [], [], []
    vel, pres, velstar = [], [], []
    for e in range(mesh.n_elements):
        etype, _ = mesh.elements[e]
        coords = mesh.element_coords(e)
        ref = build_reference_element(etype, fields.degree)
        geo = build_reference_element(etype, 1)
        vertex_vals = ref.eval_basis(geo.nodes)
        u_v = vertex_vals @ fields.velocity[e].T
        p_v = vertex_vals @ fields.pressure[e]
        if post is not None:
            star = build_reference_element(etype, post.degree)
            star_vals = star.eval_basis(geo.nodes)
            us_v = star_vals @ post.velocity[e].T
        base = len(points)
        perm = _VTK_PERM[etype]
        points.extend(coords[i] for i in range(len(coords)))
        cells.append([base + i for i in perm])
        types.append(_VTK_CELL_TYPE[etype])
        vel.extend(u_v)
        pres.extend(p_v)
        if post is not None:
            velstar.extend(us_v)
    with open(path, "w") as fh:
        _write_vtk_header(fh, title, points)
        _write_vtk_cells(fh, cells, types)
        fh.write(f"POINT_DATA {len(points)}\n")
        fh.write("VECTORS velocity double\n")
        for u in vel:
            row = list(u) + [0.0] * (3 - len(u))
            fh.write(" ".join(_fmt(c) for c in row) + "\n")
        fh.write("SCALARS pressure double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for p in pres:
            fh.write(_fmt(p) + "\n")
        if post is not None:
            fh.write("VECTORS velocity_post double\n")
            for u in velstar:
                row = list(u) + [0.0] * (3 - len(u))
                fh.write(" ".join(_fmt(c) for c in row) + "\n")
        fh.write(f"CELL_DATA {len(cells)}\n")
        fh.write("SCALARS boundary_pressure_mean double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for r in fields.rho:
            fh.write(_fmt(r) + "\n")


def fields_to_json(fields, path, post=None):
    """Dump the per-element coefficient arrays (nodal Lagrange bases)."""
    payload = {
        "degree": fields.degree,
        "viscosity": fields.viscosity,
        "mixed": fields.mixed.tolist(),
        "velocity": fields.velocity.tolist(),
        "pressure": fields.pressure.tolist(),
        "rho": fields.rho.tolist(),
        "zeta": fields.zeta.tolist(),
        "trace": {str(fi): v.tolist() for fi, v in sorted(fields.trace.items())},
        "multiplier": fields.multiplier,
    }
    if post is not None:
        payload["velocity_post"] = post.velocity.tolist()
        payload["post_degree"] = post.degree
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def stats_to_json(stats: dict, path):
    with open(path, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sweep_to_csv(rows, path):
    """Tau-sweep table; failed solves keep their message in the last column."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["family", "k", "level", "tau", "dofs", "err_u", "err_p", "err_L",
             "err_ustar", "failed"]
        )
        for r in rows:
            if r.get("failed"):
                writer.writerow(
                    [r["family"], r["k"], r["level"], _fmt(r["tau"]),
                     "", "", "", "", "", r["failed"]]
                )
            else:
                writer.writerow(
                    [r["family"], r["k"], r["level"], _fmt(r["tau"]), r["dofs"],
                     _fmt(r["err_u"]), _fmt(r["err_p"]), _fmt(r["err_L"]),
                     _fmt(r["err_ustar"]), ""]
                )
