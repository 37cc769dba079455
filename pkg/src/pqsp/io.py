"""Plain-text persistence: field CSV with a JSON sidecar, JSON documents.

Every file written here is accompanied by its provenance. Fields and tables
get a ``<name>.json`` sidecar and JSON documents embed it directly. Writes
go to a temporary file in the target directory and are renamed into place,
so readers never see a partial file.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import RadialField, _build, grid_from_spec, profile_from_dict


def _clean(obj):
    """JSON-safe copy: numpy scalars to floats, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "value") and hasattr(obj, "name"):  # enums
        return obj.value
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj):
    return atomic_write(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_table(path, rows, columns=None, provenance=None):
    """CSV table of dict rows; floats use ``repr`` so they round-trip."""
    rows = list(rows)
    if columns is None:
        columns = []
        for row in rows:
            for k in row:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    atomic_write(path, buf.getvalue())
    if provenance is not None:
        write_json(sidecar_path(path), provenance)
    return Path(path)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if hasattr(v, "value") and hasattr(v, "name"):
        return v.value
    return v


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_field(path, field: RadialField, provenance=None):
    """Write ``r,value`` rows plus a sidecar with grid spec and profile."""
    rows = [{"r": float(r), "value": float(v)}
            for r, v in zip(field.grid.nodes, field.values)]
    meta = {"grid": field.grid.spec(),
            "profile": None if field.profile is None
            else field.profile.to_dict()}
    if provenance is not None:
        meta["provenance"] = provenance
    write_table(path, rows, ["r", "value"])
    write_json(sidecar_path(path), meta)
    return Path(path)


def load_field(path):
    """Inverse of :func:`write_field`.

    The grid is rebuilt from the stored nodes, which ``repr`` round-trips
    exactly, so rescaled grids survive as well.
    """
    rows = read_table(path)
    meta = read_json(sidecar_path(path))
    spec = meta["grid"]
    r = np.array([float(x["r"]) for x in rows])
    vals = np.array([float(x["value"]) for x in rows])
    if len(r) != spec["n"] or r[-1] != spec["R"]:
        raise ValueError(f"{path}: nodes do not match the recorded grid")
    ref = grid_from_spec(spec)
    grid = ref if np.array_equal(ref.nodes, r) else _build(
        spec["R"], r, spec["grading"], spec["ratio"])
    prof = meta.get("profile")
    return RadialField(grid, vals,
                       None if prof is None else profile_from_dict(prof))
