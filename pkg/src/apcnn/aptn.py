"""APTN tensor file format.

Layout: magic bytes ``41 50 54 4E`` ("APTN"), a 32-bit little-endian
unsigned rank, that many 32-bit LE unsigned dims, then the raw 32-bit LE
float payload in row-major order.  Used for parameter checkpoints,
attention-mask exports, and test fixtures.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"APTN"


def write_aptn(path, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def read_aptn(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not an APTN file (bad magic {raw[:4]!r})")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(dims)) if rank else 1
    offset = 8 + 4 * rank
    if len(raw) != offset + 4 * count:
        raise DataError(f"{path}: payload size {len(raw) - offset} does not match dims {dims}")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
