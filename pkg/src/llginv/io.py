"""Field snapshots and CSV exports.

Snapshot layout (little endian): 4-byte magic ``LLGF``, ``uint32`` nt, nx
and component count, then ``float64`` values in time-major order
``[t][x][component]``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import Grid

MAGIC = b"LLGF"
_HEADER = struct.Struct("<4sIII")


def write_snapshot(path, field: np.ndarray) -> None:
    f = np.asarray(field, dtype="<f8")
    if f.ndim != 3:
        raise ValueError("snapshot field must have shape (nt, nx, components)")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, *f.shape))
        fh.write(np.ascontiguousarray(f).tobytes())


def read_snapshot(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for a snapshot header")
    magic, nt, nx, nc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * nt * nx * nc:
        raise ValueError("snapshot payload size does not match its header")
    return np.frombuffer(body, dtype="<f8").reshape(nt, nx, nc).astype(float)


def write_field_csv(path, field: np.ndarray, grid: Grid) -> None:
    """Long-format table with columns ``t, x, m1, m2, m3``."""
    f = grid.check(field, "field")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "m1", "m2", "m3"])
        for n, t in enumerate(grid.t):
            for i, x in enumerate(grid.x):
                w.writerow([repr(float(t)), repr(float(x)), *(repr(float(v)) for v in f[n, i])])


def write_channels_csv(path, t: np.ndarray, data: np.ndarray) -> None:
    """Voltage traces with columns ``t, y_k_l`` for every channel."""
    K, L, nt = data.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"y_{k}_{l}" for k in range(K) for l in range(L)])
        flat = data.reshape(K * L, nt)
        for i in range(nt):
            w.writerow([repr(float(t[i]))] + [repr(float(v)) for v in flat[:, i]])


def read_channels_csv(path, K: int, L: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    arr = np.array(rows, dtype=float)
    return arr[:, 0], arr[:, 1:].T.reshape(K, L, -1)
