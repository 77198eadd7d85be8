"""Deterministic artifact writers: CSV ledgers, JSON documents, raw snapshots."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__

__all__ = [
    "format_value",
    "write_csv",
    "write_json",
    "write_snapshot",
    "read_snapshot",
    "versions",
]


def format_value(v) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(v)


def write_csv(path: str | Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r[c]) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path: str | Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_snapshot(stem: str | Path, array: np.ndarray, meta: dict) -> Path:
    """Write ``<stem>.bin`` (little-endian float64, C order) and ``<stem>.json``."""
    stem = Path(stem)
    a = np.ascontiguousarray(array, dtype="<f8")
    bin_path = stem.with_suffix(".bin")
    a.tofile(bin_path)
    side = dict(meta)
    side.update({"shape": list(a.shape), "dtype": "float64", "byte_order": "little", "order": "C",
                 "file": bin_path.name})
    write_json(stem.with_suffix(".json"), side)
    return bin_path


def read_snapshot(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a snapshot given either its ``.bin`` or ``.json`` path (or the stem)."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".bin", ".json") else p
    with open(stem.with_suffix(".json")) as fh:
        meta = json.load(fh)
    a = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    return a.reshape(meta["shape"]), meta


def versions() -> dict:
    return {
        "porehomog": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
