"""Byte-stable CSV/JSON writers and the grid-function file format.

Floats are written with 17 significant digits so that reading a file back
reproduces every value exactly.  Line endings are always ``\\n``.

Grid-function files start with one JSON header line followed by the values as
little-endian 64-bit floats in row-major order.
"""

import csv
import io
import json
import math
from dataclasses import asdict, is_dataclass

import numpy as np

from .geometry import BoxSpec
from .operator import Grid, GridFunction

GRID_FORMAT = "ucplab-gridfunction"


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def csv_text(rows, columns=None):
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(rows, columns))


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def jsonable(obj):
    """Plain JSON-safe structure; non-finite floats become strings."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_grid_function(path, f):
    g = f.grid
    header = {
        "format": GRID_FORMAT, "version": 1, "d": g.d, "L": g.box.L, "center": list(g.box.center),
        "bc": g.bc, "n_per_side": g.n_per_side, "dtype": "<f8", "order": "C",
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_grid_function(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != GRID_FORMAT:
            raise ValueError(f"{path} is not a grid-function file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    box = BoxSpec(header["d"], header["L"], header["center"], header["bc"])
    grid = Grid(box, header["n_per_side"], cap=max(200_000, data.size))
    return GridFunction(grid, data.astype(float))


def grid_function_rows(f, max_nodes=100_000):
    """Rows ``x1 .. xd, value`` for small grids."""
    if f.grid.size > max_nodes:
        raise ValueError(f"grid has {f.grid.size} nodes; CSV export is limited to {max_nodes}")
    coords = f.grid.coords()
    names = [f"x{i + 1}" for i in range(f.grid.d)]
    rows = [dict(zip(names, c), value=v) for c, v in zip(coords.tolist(), f.values.ravel().tolist())]
    return rows, names + ["value"]


def write_grid_function_csv(path, f):
    rows, cols = grid_function_rows(f)
    write_csv(path, rows, cols)
