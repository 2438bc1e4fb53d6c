"""Delimited and JSON serialization with round-trip float formatting."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.17g}"


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return FLOAT_FMT.format(float(value))


def write_csv(path, columns, rows, int_columns: int = 0) -> Path:
    """Write a numeric table; the first ``int_columns`` columns are integers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns)) if len(rows) else np.empty((0, len(columns)))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [str(int(v)) for v in row[:int_columns]] + [FLOAT_FMT.format(v) for v in row[int_columns:]]
            )
    return path


def write_records(path, columns, records) -> Path:
    """Write mixed-type rows (dicts keyed by column name)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([fmt(rec[c]) if rec.get(c) is not None else "" for c in columns])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric table written by :func:`write_csv`."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty (no header)") from None
        data = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(data, dtype=float).reshape(-1, len(columns))
    return columns, arr


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def dumps(obj) -> str:
    # float repr is the shortest string that round-trips exactly
    return json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path
