"""Deterministic JSON/CSV/TSV emission and point-file parsing."""

from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path

import numpy as np

from .errors import PointFileError
from .geometry import PointConfig

SCHEMA_VERSION = 1


def to_jsonable(obj):
    """Plain Python containers and scalars from numpy-bearing structures."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + ",".join(pad + _encode(v, indent, level + 1) for v in obj) + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (pad + json.dumps(k) + ": " + _encode(v, indent, level + 1) for k, v in obj.items())
        return "{" + ",".join(items) + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(payload, indent: int = 2) -> str:
    """JSON with 17 significant digits per float and a schemaVersion field."""
    data = to_jsonable(payload)
    if isinstance(data, dict):
        data = {"schemaVersion": SCHEMA_VERSION, **data}
    return _encode(data, indent, 0) + "\n"


def loads(text: str):
    return json.loads(text)


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(dumps(payload))
    return path


def write_points_csv(path, points, labels=None) -> Path:
    path = Path(path)
    pts = np.asarray(points, dtype=float)
    with path.open("w", newline="") as fh:
        for i, row in enumerate(pts):
            fields = [_float(float(v)) for v in row]
            if labels is not None:
                fields.append(str(labels[i]))
            fh.write(",".join(fields) + "\n")
    return path


def write_table_tsv(path, header, rows) -> Path:
    """Tab-separated plot-data table with a one-line header."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_float(float(v)) for v in row) + "\n")
    return path


def _number(text: str):
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _duplicates(points) -> list:
    seen = {}
    dups = []
    for i, row in enumerate(map(tuple, points)):
        if row in seen:
            dups.append((seen[row], i))
        else:
            seen[row] = i
    return dups


def parse_point_file(path, expected_dim=None) -> tuple[PointConfig, list]:
    """Points from CSV (optional trailing label column) or a JSON array of arrays.

    Returns the configuration and a list of warnings about duplicate points.
    Errors carry the 1-based row number.
    """
    path = Path(path)
    if not path.exists():
        raise PointFileError(f"{path}: no such file")
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith(("[", "{")):
        points, labels = _parse_json(text, expected_dim)
    else:
        points, labels = _parse_csv(text, expected_dim)
    if not points:
        raise PointFileError(f"{path}: no points")
    arr = np.array(points, dtype=float)
    notes = [f"duplicate point: row {b + 1} repeats row {a + 1}" for a, b in _duplicates(arr)]
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return PointConfig(arr, labels if any(l is not None for l in labels) else None), notes


def _parse_json(text, expected_dim):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PointFileError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    labels = None
    if isinstance(data, dict):
        labels = data.get("labels")
        data = data.get("points")
    if not isinstance(data, list):
        raise PointFileError("expected a JSON array of arrays")
    dim = expected_dim
    points = []
    for k, row in enumerate(data, start=1):
        if not isinstance(row, list) or not row:
            raise PointFileError("expected a non-empty array of numbers", k)
        values = []
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise PointFileError(f"non-numeric entry {v!r}", k)
            values.append(float(v))
        dim = len(values) if dim is None else dim
        if len(values) != dim:
            raise PointFileError(f"expected {dim} coordinates, found {len(values)}", k)
        points.append(values)
    if labels is not None and len(labels) != len(points):
        raise PointFileError(f"{len(labels)} labels for {len(points)} points")
    return points, list(labels) if labels is not None else [None] * len(points)


def _parse_csv(text, expected_dim):
    dim = expected_dim
    points, labels = [], []
    for k, row in enumerate(csv.reader(text.splitlines()), start=1):
        fields = [f.strip() for f in row]
        if not fields or all(not f for f in fields) or fields[0].startswith("#"):
            continue
        values = [_number(f) for f in fields]
        label = None
        if values[-1] is None and len(fields) > 1 and (dim is None or len(fields) == dim + 1):
            label = fields[-1]
            values = values[:-1]
        bad = [fields[i] for i, v in enumerate(values) if v is None]
        if bad:
            raise PointFileError(f"non-numeric field {bad[0]!r}", k)
        dim = len(values) if dim is None else dim
        if len(values) != dim:
            raise PointFileError(f"expected {dim} coordinates, found {len(values)}", k)
        points.append(values)
        labels.append(label)
    return points, labels
