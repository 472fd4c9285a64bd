"""NDF1: the on-disk tensor format used for every binary payload.

A file is one ASCII header line followed by the raw payload:

    NDF1 f32 <rank> <dim0> <dim1> ...\n
    <row-major little-endian float32 bytes>

The header is deliberately human-readable (``head -c 64 file`` tells you
what is inside) and the payload is bit-exact, so round trips are
lossless for float32 data and the files are easy to parse from any
language.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = "NDF1"
DTYPE_CODE = "f32"


def save_array(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write ``array`` to ``path`` as NDF1. Data is cast to float32."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = " ".join([MAGIC, DTYPE_CODE, str(arr.ndim), *map(str, arr.shape)])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(arr.tobytes())


def load_array(path: str | os.PathLike) -> np.ndarray:
    """Read an NDF1 file back into a float32 array."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        fields = header.split()
        if len(fields) < 3 or fields[0] != MAGIC:
            raise SchemaError(f"{path}: not an NDF1 file (header {header!r})")
        if fields[1] != DTYPE_CODE:
            raise SchemaError(f"{path}: unsupported dtype code {fields[1]!r}")
        try:
            rank = int(fields[2])
            dims = tuple(int(x) for x in fields[3 : 3 + rank])
        except ValueError as exc:
            raise SchemaError(f"{path}: malformed NDF1 header {header!r}") from exc
        if len(dims) != rank or any(d < 0 for d in dims):
            raise SchemaError(f"{path}: malformed NDF1 shape in header {header!r}")
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise SchemaError(
                f"{path}: truncated payload ({len(payload)} bytes, expected {4 * count})"
            )
        return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
