"""CSV and heatmap artifacts with provenance headers."""
from __future__ import annotations

import csv
import hashlib
import json

import numpy as np
from PIL import Image

from . import __version__


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(config: dict) -> list[str]:
    return [f"multicontinuum {__version__}", f"config {config_hash(config)}"]


def _header(fh, header):
    for line in header or []:
        fh.write(f"# {line}\n")


def write_nodal_csv(path, fields: dict, h: float, header=None):
    """Nodal fields on a square grid of spacing ``h``: columns i, j, x, y, <names>."""
    names = list(fields)
    arrs = [np.asarray(fields[k]) for k in names]
    ny, nx = arrs[0].shape
    with open(path, "w", newline="") as fh:
        _header(fh, header)
        wr = csv.writer(fh)
        wr.writerow(["i", "j", "x", "y"] + names)
        for j in range(ny):
            for i in range(nx):
                wr.writerow([i, j, repr(i * h), repr(j * h)] + [repr(float(a[j, i])) for a in arrs])


def write_cell_array(path, a, header=None):
    """Cell array as a plain CSV matrix, row j = y index."""
    a = np.asarray(a)
    with open(path, "w", newline="") as fh:
        _header(fh, header)
        wr = csv.writer(fh)
        for row in a:
            wr.writerow([repr(float(v)) if a.dtype.kind == "f" else int(v) for v in row])


def read_cell_array(path, dtype=float):
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            rows.append([dtype(float(v)) if dtype is int else dtype(v) for v in line.strip().split(",")])
    a = np.array(rows, dtype=dtype)
    if a.ndim != 2:
        raise ValueError(f"{path}: expected a 2-D cell array")
    return a


def heatmap(path, a, log_scale=False):
    """Grayscale PGM of an array (row 0 = bottom), min to black, max to white."""
    a = np.asarray(a, dtype=float)
    if log_scale:
        a = np.log10(np.maximum(a, np.finfo(float).tiny))
    lo, hi = np.nanmin(a), np.nanmax(a)
    span = hi - lo if hi > lo else 1.0
    img = np.nan_to_num((a - lo) / span, nan=0.0)
    img = np.flipud((255 * img).round().astype(np.uint8))
    Image.fromarray(img, mode="L").save(path, format="PPM")
