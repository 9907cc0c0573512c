"""Plain-text persistence: numeric arrays, density models and the metrics table.

Arrays are comma-separated decimal text with 17 significant digits and a
one-line header, so reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

from .distributions import DensityModel, model_from_dict

METRIC_COLUMNS = (
    "task", "method", "N", "M", "seed", "iteration_count", "mmd2_posterior", "w2_posterior",
    "ppc_mmd2", "ppc_w2", "furuta_sync_error", "wall_seconds",
)
NA = "NA"


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_number(x) -> str:
    return format(float(x), ".17g")


def save_array(path, array, columns=None):
    a = np.asarray(array, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if columns is None:
        columns = [f"c{i}" for i in range(a.shape[1])]
    if len(columns) != a.shape[1]:
        raise ValueError("one column name per column required")
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    np.savetxt(buf, a, fmt="%.17g", delimiter=",")
    _atomic_write(path, buf.getvalue())


def load_array(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def save_model(path, model: DensityModel):
    """``key = value`` lines; arrays are flattened with their shape alongside."""
    lines = []
    for key, value in model.to_dict().items():
        if isinstance(value, str):
            lines.append(f"{key} = {value}")
            continue
        arr = np.asarray(value, dtype=float)
        lines.append(f"{key}.shape = {','.join(str(s) for s in arr.shape)}")
        lines.append(f"{key} = {','.join(format_number(v) for v in arr.ravel())}")
    _atomic_write(path, "\n".join(lines) + "\n")


def load_model(path) -> DensityModel:
    raw = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value
    d = {}
    for key, value in raw.items():
        if key.endswith(".shape"):
            continue
        if key == "kind":
            d[key] = value
            continue
        shape = tuple(int(s) for s in raw[f"{key}.shape"].split(",") if s)
        vals = [float(v) for v in value.split(",")] if value else []
        d[key] = np.array(vals).reshape(shape)
    return model_from_dict(d)


def save_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _cell(value) -> str:
    if value is None:
        return NA
    if isinstance(value, (float, np.floating)):
        return NA if math.isnan(value) else format_number(value)
    return str(value)


def append_metrics_row(path, row: dict):
    """Append one row to the metrics table, writing the header on first use."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRIC_COLUMNS)
        writer.writerow([_cell(row.get(c)) for c in METRIC_COLUMNS])


def format_metrics_row(row: dict) -> str:
    return ",".join(_cell(row.get(c)) for c in METRIC_COLUMNS)


def read_metrics(path) -> list[dict]:
    """Rows of the metrics table with numeric cells parsed and ``NA`` as ``None``."""
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, value in raw.items():
                if value == NA:
                    row[key] = None
                elif key in ("task", "method"):
                    row[key] = value
                elif key in ("N", "M", "seed", "iteration_count"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


def write_table(path_or_none, rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    text = buf.getvalue()
    if path_or_none is not None:
        _atomic_write(path_or_none, text)
    return text
