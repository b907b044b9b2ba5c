"""Matrix and snapshot file formats.

Binary layout: the 4 magic bytes ``OPNF``, two little-endian ``u64`` (rows,
cols), then ``rows * cols`` little-endian ``f64`` values in row-major order.

CSV layout: a ``# n=<n> K=<K>`` header line followed by one state per row,
floats written in shortest round-trip form.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OPNF"
_HEADER = struct.Struct("<4sQQ")


def write_matrix_binary(path, A) -> None:
    A = np.ascontiguousarray(A, dtype="<f8")
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
        f.write(A.tobytes(order="C"))


def read_matrix_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    A = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return A.reshape(rows, cols).astype(float)


def write_snapshots_csv(path, states) -> None:
    """Write an ``n x K`` snapshot matrix, one state (column) per CSV row."""
    states = np.asarray(states, dtype=float)
    n, K = states.shape
    lines = [f"# n={n} K={K}"]
    lines += [",".join(repr(float(v)) for v in col) for col in states.T]
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshots_csv(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip()
        try:
            fields = dict(item.split("=") for item in header.lstrip("#").split())
            n, K = int(fields["n"]), int(fields["K"])
        except (KeyError, ValueError):
            raise ValueError(f"{path}: bad header {header!r}") from None
        rows = np.loadtxt(f, delimiter=",", ndmin=2)
    if rows.shape != (K, n):
        raise ValueError(f"{path}: header says K={K}, n={n} but data is {rows.shape}")
    return rows.T.copy()


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def encode_float(x: float):
    """JSON-safe float: non-finite values become strings."""
    x = float(x)
    if np.isfinite(x):
        return x
    return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")


def decode_float(x) -> float:
    return float(x)
