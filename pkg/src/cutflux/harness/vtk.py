"""Legacy ASCII VTK (unstructured grid) export.

``fields`` maps names to arrays located by their leading dimension:

* ``(V,)`` / ``(V, 2)``: point scalar / vector,
* ``(T,)`` / ``(T, 2)``: cell scalar / vector,
* ``(2, V, ...)`` / ``(2, T, ...)``: one array per phase.

Per-phase arrays are written as ``name_1`` and ``name_2`` on the background
mesh. In clipped mode every cut triangle is replaced by a fan triangulation of
its two phase pieces; per-phase arrays are then written once, each sub-triangle
taking the value of its own phase. Point values on sub-triangles are linear
interpolants of the parent triangle's vertex values.
"""
import numpy as np

from ..cutgeom import barycentric
from ..errors import InvalidArgument
from ..quadrature import fan_triangles

VTK_TRIANGLE = 5


def _classify(mesh, name, arr):
    V, T = mesh.n_nodes, mesh.n_triangles
    a = np.asarray(arr, float)
    if a.ndim >= 2 and a.shape[0] == 2 and a.shape[1] in (V, T) and a.ndim <= 3:
        loc = "point" if a.shape[1] == V else "cell"
        if V == T:
            raise InvalidArgument(f"field {name!r}: cannot tell points from cells when V == T")
        return loc, True, a
    if a.shape[0] in (V, T) and a.ndim <= 2 and (a.ndim == 1 or a.shape[1] == 2):
        if V == T:
            raise InvalidArgument(f"field {name!r}: cannot tell points from cells when V == T")
        return ("point" if a.shape[0] == V else "cell"), False, a
    raise InvalidArgument(f"field {name!r} has shape {a.shape}, matching neither "
                          f"{V} points nor {T} cells")


def _fmt(v):
    return repr(float(v))


def _write_block(fh, name, a):
    name = name.replace(" ", "_")
    if a.ndim == 1:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(_fmt(v) for v in a) + "\n")
    else:
        fh.write(f"VECTORS {name} double\n")
        fh.write("\n".join(f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in a) + "\n")


def _sub_triangles(mesh, topology):
    """(points (S, 3, 2), parent (S,), phase (S,)) of the clipped partition."""
    pts, parent, phase = [], [], []
    xy = mesh.tri_coords()
    for t in range(mesh.n_triangles):
        p = int(topology.tri_phase[t])
        if p >= 0:
            pts.append(xy[t])
            parent.append(t)
            phase.append(p)
            continue
        cell = topology.cells[t]
        for i in range(2):
            for tri in fan_triangles(cell.polys[i]):
                pts.append(np.asarray(tri, float))
                parent.append(t)
                phase.append(i)
    return np.array(pts), np.array(parent, np.int64), np.array(phase, np.int64)


def export_vtk(mesh, fields, path, topology=None, clipped=False, title="cutflux"):
    """Write ``fields`` on ``mesh`` (or on its clipped partition) to ``path``."""
    fields = fields or {}
    parsed = {name: _classify(mesh, name, arr) for name, arr in fields.items()}
    if clipped and topology is None:
        raise InvalidArgument("clipped export needs the cut topology")
    point, cell = {}, {}
    if not clipped:
        points = mesh.nodes
        cells = mesh.triangles
        for name, (loc, per_phase, a) in parsed.items():
            target = point if loc == "point" else cell
            if per_phase:
                target[f"{name}_1"], target[f"{name}_2"] = a[0], a[1]
            else:
                target[name] = a
    else:
        sub, parent, phase = _sub_triangles(mesh, topology)
        points = sub.reshape(-1, 2)
        cells = np.arange(points.shape[0]).reshape(-1, 3)
        qtri = np.repeat(parent, 3)
        qphase = np.repeat(phase, 3)
        lam = barycentric(mesh, qtri, points)
        tri_nodes = mesh.triangles[qtri]
        cell["phase"] = phase.astype(float) + 1.0
        cell["parent"] = parent.astype(float)
        for name, (loc, per_phase, a) in parsed.items():
            if loc == "cell":
                cell[name] = a[phase, parent] if per_phase else a[parent]
            else:
                vals = a[qphase[:, None], tri_nodes] if per_phase else a[tri_nodes]
                point[name] = np.einsum("qa,qa...->q...", lam, vals)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {points.shape[0]} double\n")
        fh.write("\n".join(f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in points) + "\n")
        n = cells.shape[0]
        fh.write(f"CELLS {n} {4 * n}\n")
        fh.write("\n".join(f"3 {a} {b} {c}" for a, b, c in cells) + "\n")
        fh.write(f"CELL_TYPES {n}\n")
        fh.write("\n".join([str(VTK_TRIANGLE)] * n) + "\n")
        if point:
            fh.write(f"POINT_DATA {points.shape[0]}\n")
            for name, a in point.items():
                _write_block(fh, name, a)
        if cell:
            fh.write(f"CELL_DATA {n}\n")
            for name, a in cell.items():
                _write_block(fh, name, a)
    return path


def read_vtk_counts(path):
    """Header counts of a legacy file: ``{"POINTS": n, "CELLS": n, ...}`` plus
    the names of the data arrays, for structural checks."""
    out = {"arrays": []}
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise InvalidArgument(f"{path} is not a legacy VTK file")
    for ln in lines:
        parts = ln.split()
        if not parts:
            continue
        key = parts[0]
        if key in ("POINTS", "CELL_TYPES", "POINT_DATA", "CELL_DATA"):
            out[key] = int(parts[1])
        elif key == "CELLS":
            out["CELLS"] = int(parts[1])
            out["CELLS_SIZE"] = int(parts[2])
        elif key in ("SCALARS", "VECTORS"):
            out["arrays"].append(parts[1])
    return out
