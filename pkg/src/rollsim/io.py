"""CSV and JSON writers with fixed float formatting.

Floats are written with 17 significant digits so files round-trip exactly;
non-finite values become the strings "inf", "-inf" and "nan" in JSON.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return FLOAT_FMT % v
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """Header and float array of a numeric CSV."""
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    data = np.array([[float(x) for x in line.split(",")] for line in text[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


def jsonable(obj):
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
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(FLOAT_FMT % v)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path


def path_rows(grid, values):
    values = np.asarray(values, dtype=float).reshape(len(grid), -1)
    return np.column_stack([grid, values])


def write_path(path, grid, values, names) -> Path:
    return write_csv(path, ["t", *names], path_rows(grid, values))


def point_names(ambient_dim: int):
    return ["x", "y", "z"] if ambient_dim == 3 else [f"x{i}" for i in range(ambient_dim)]


def write_frames(path, u) -> Path:
    """Base point and frame columns e<column><row> per node."""
    n, d = u.frames.shape[1:]
    names = point_names(n) + [f"e{m}_{i}" for m in range(d) for i in range(n)]
    vals = np.concatenate([u.bases, np.swapaxes(u.frames, 1, 2).reshape(len(u.grid), -1)], axis=1)
    return write_path(path, u.grid, vals, names)
