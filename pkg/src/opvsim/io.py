"""I-V tables and legacy ASCII VTK snapshots."""
from __future__ import annotations

import csv

import numpy as np

__all__ = ["CSV_HEADER", "FIELD_NAMES", "write_iv_csv", "read_iv_csv", "write_vtk"]

CSV_HEADER = ("v_top", "v_bot", "i_top", "i_bot", "conservation", "converged")
FIELD_NAMES = ("phi", "psi", "n", "p", "X")


def _num(x):
    # repr gives the shortest string that round-trips exactly
    return repr(float(x))


def write_iv_csv(curve, path):
    """Write one row per I-V point; floats are written in round-trip precision."""
    points = list(curve)
    if not points:
        raise ValueError("refusing to write an empty I-V curve")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in points:
            w.writerow([_num(p.v_top), _num(p.v_bot), _num(p.i_top), _num(p.i_bot),
                        _num(p.conservation), "true" if p.converged else "false"])


def read_iv_csv(path):
    """Inverse of write_iv_csv: a list of dicts with parsed values."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            parsed = {k: float(row[k]) for k in CSV_HEADER[:-1]}
            parsed["converged"] = row["converged"] == "true"
            rows.append(parsed)
    return rows


def write_vtk(fields, mesh, path, title="opvsim fields"):
    """Legacy ASCII VTK file with one POINT_DATA scalar per entry of ``fields``.

    ``fields`` maps names (normally phi, psi, n, p, X) to nodal arrays.
    2D meshes are written as STRUCTURED_GRID, 3D meshes as
    UNSTRUCTURED_GRID of tetrahedra.
    """
    if not fields:
        raise ValueError("no fields to write")
    nv = mesh.num_vertices
    for name, values in fields.items():
        if np.shape(values) != (nv,):
            raise ValueError(f"field {name!r} has shape {np.shape(values)}, expected ({nv},)")
        if any(c.isspace() for c in name):
            raise ValueError(f"field name {name!r} must not contain whitespace")
    pts = np.zeros((nv, 3))
    pts[:, :mesh.dim] = mesh.vertices
    lines = ["# vtk DataFile Version 3.0", title[:255].replace("\n", " "), "ASCII"]
    if mesh.dim == 2:
        nx, ny = mesh.counts
        lines += ["DATASET STRUCTURED_GRID", f"DIMENSIONS {nx} {ny} 1", f"POINTS {nv} double"]
        lines += [" ".join(_num(c) for c in row) for row in pts]
    else:
        nc = mesh.num_cells
        lines += ["DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
        lines += [" ".join(_num(c) for c in row) for row in pts]
        lines.append(f"CELLS {nc} {5 * nc}")
        lines += ["4 " + " ".join(str(int(v)) for v in cell) for cell in mesh.cells]
        lines.append(f"CELL_TYPES {nc}")
        lines += ["10"] * nc
    lines.append(f"POINT_DATA {nv}")
    for name, values in fields.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_num(v) for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
