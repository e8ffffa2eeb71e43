"""File helpers shared by the modules: atomic writes, canonical JSON, CSV tables."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(obj):
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def format_csv(header, columns):
    """Render equal-length columns as LF-terminated CSV with round-trip float formatting."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    lines = [",".join(header)]
    conv = []
    for c in cols:
        if c.dtype == bool:
            conv.append([str(int(v)) for v in c])
        elif np.issubdtype(c.dtype, np.integer):
            conv.append([str(int(v)) for v in c])
        else:
            conv.append([repr(float(v)) for v in c])
    for i in range(n):
        lines.append(",".join(col[i] for col in conv))
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Read a header-row CSV of numbers into (header, 2-D float array)."""
    with open(path) as fh:
        rows = [(i, ln.rstrip("\n")) for i, ln in enumerate(fh, 1) if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise ConfigurationError("empty CSV", source=str(path))
    header = [h.strip() for h in rows[0][1].split(",")]
    values = []
    for lineno, r in rows[1:]:
        cells = r.split(",")
        if len(cells) != len(header):
            raise ConfigurationError(f"expected {len(header)} columns, got {len(cells)}", line=lineno, source=str(path))
        try:
            values.append([float(x) for x in cells])
        except ValueError as exc:
            raise ConfigurationError(str(exc), line=lineno, source=str(path)) from None
    data = np.array(values, dtype=float)
    if data.size == 0:
        data = data.reshape(0, len(header))
    return header, data
