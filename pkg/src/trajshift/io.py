"""Bit-stable writers for CSV tables and JSON manifests.

Floats are written with 17 significant digits, which round-trips every
IEEE double exactly.  Files are UTF-8 with LF line endings.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = ["format_value", "write_csv", "read_csv", "write_manifest"]


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence], comment: Optional[str] = None) -> int:
    """Write a table; ``comment`` becomes a leading ``# ...`` line.  Returns the row count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
            n += 1
    return n


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    table = list(csv.reader(lines))
    return table[0], table[1:]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def write_manifest(path: str, manifest: dict) -> None:
    text = json.dumps(_jsonable(manifest), indent=2, sort_keys=True, allow_nan=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    os.replace(tmp, path)
