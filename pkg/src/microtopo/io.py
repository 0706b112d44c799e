"""File export: legacy VTK structured points and CSV tables.

VTK layout (ASCII, one value per line)::

    # vtk DataFile Version 3.0
    <title>
    ASCII
    DATASET STRUCTURED_POINTS
    DIMENSIONS <nnx> <nny> 1
    ORIGIN 0 0 0
    SPACING <hx> <hy> 1
    POINT_DATA <nnx * nny>
    SCALARS <name> double 1
    LOOKUP_TABLE default
    <values, x fastest>
    VECTORS <name> double
    <vx vy 0>

Floats are written with ``repr`` (shortest round-trip form), so files are
byte-stable and re-reading reproduces the values exactly.  Periodic grids
are written without the duplicated seam nodes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .fem import Grid


def _fmt(x) -> str:
    x = float(x)
    if x == 0.0:
        return "0"
    return repr(x)


def vtk_text(grid: Grid, fields: dict, title: str = "microtopo field") -> str:
    n = grid.nnx * grid.nny
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nnx} {grid.nny} 1",
        "ORIGIN 0 0 0",
        f"SPACING {_fmt(grid.hx)} {_fmt(grid.hy)} 1",
        f"POINT_DATA {n}",
    ]
    for name, values in fields.items():
        v = np.asarray(values, dtype=float)
        if v.shape == (n,):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(a) for a in v]
        elif v.shape in ((2 * n,), (n, 2)):
            v = v.reshape(n, 2)
            lines.append(f"VECTORS {name} double")
            lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in v]
        else:
            raise ValueError(f"field {name!r} has shape {v.shape}; expected ({n},) or ({n}, 2)")
    return "\n".join(lines) + "\n"


def export_vtk(path, grid: Grid, fields: dict, title: str = "microtopo field") -> Path:
    """Write nodal scalar/vector fields of ``grid`` as legacy ASCII VTK."""
    path = Path(path)
    text = vtk_text(grid, fields, title)
    try:
        path.write_text(text, encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc.strerror or exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Minimal reader for files written by ``export_vtk``."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    dims = [int(a) for a in lines[4].split()[1:3]]
    n = dims[0] * dims[1]
    out = {}
    i = 8
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "SCALARS":
            out[head[1]] = np.array([float(a) for a in lines[i + 2:i + 2 + n]])
            i += 2 + n
        elif head[0] == "VECTORS":
            out[head[1]] = np.array([[float(a) for a in ln.split()[:2]] for ln in lines[i + 1:i + 1 + n]])
            i += 1 + n
        else:
            raise ValueError(f"{path}: unexpected line {lines[i]!r}")
    return out


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def export_csv(rows, path, columns=None) -> Path:
    """Write a list of dicts as CSV (header row, RFC-4180 quoting, CRLF line ends)."""
    path = Path(path)
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            writer.writerow(columns)
            for r in rows:
                writer.writerow([_cell(r.get(c, "")) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write CSV file {path}: {exc.strerror or exc}") from exc
    return path


def _parse(s: str):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


def write_json(data, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write JSON file {path}: {exc.strerror or exc}") from exc
    return path
