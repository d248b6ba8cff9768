"""Deterministic writers for CSV tables, JSON reports and legacy ASCII VTK meshes.

Floats are written with ``repr`` (shortest round-trip form) and JSON keys are
sorted, so identical inputs always give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def jsonable(x):
    """Convert numpy scalars/arrays and tuples into plain JSON types; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, columns, path, blank=()) -> Path:
    """Write ``rows`` (dicts) with a fixed column order; columns in ``blank`` are left empty."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow(["" if c in blank else _cell(r.get(c)) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    """Read a table written by :func:`write_csv`; numeric cells become floats."""
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = v
            out.append(row)
    return out


def write_vtk(mesh, path, point_data=None, cell_data=None, title: str = "finsler solution") -> Path:
    """Legacy ASCII VTK unstructured grid of a triangle mesh.

    ``point_data``/``cell_data`` map names to arrays of shape ``(n,)``
    (scalars) or ``(n, 2)`` (vectors, padded with a zero third component).
    """
    path = Path(path)
    x = mesh.nodes
    t = mesh.triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(x)} double"]
    lines += [f"{a!r} {b!r} 0.0" for a, b in x.tolist()]
    lines.append(f"CELLS {len(t)} {4 * len(t)}")
    lines += [f"3 {i} {j} {k}" for i, j, k in t.tolist()]
    lines.append(f"CELL_TYPES {len(t)}")
    lines += ["5"] * len(t)

    def block(kind, n, data):
        if not data:
            return []
        out = [f"{kind} {n}"]
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [repr(v) for v in arr.tolist()]
            else:
                out.append(f"VECTORS {name} double")
                out += [f"{a!r} {b!r} 0.0" for a, b in arr[:, :2].tolist()]
        return out

    lines += block("POINT_DATA", len(x), point_data)
    lines += block("CELL_DATA", len(t), cell_data)
    path.write_text("\n".join(lines) + "\n")
    return path
