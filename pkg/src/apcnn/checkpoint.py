"""Parameter checkpoints: a directory of APTN files plus a manifest.

The manifest is plain text, one line per parameter:
``<id>\t<file>\t<d0>,<d1>,...``.  Loading verifies the manifest against
the model's parameter list and reports the first differing id.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .aptn import read_aptn, write_aptn
from .errors import DataError
from .tensor import Parameter

MANIFEST = "manifest.txt"


def save_params(dirpath, params: Sequence[Parameter]) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for p in params:
        fname = p.id + ".aptn"
        write_aptn(d / fname, p.data)
        dims = ",".join(str(n) for n in p.data.shape)
        lines.append(f"{p.id}\t{fname}\t{dims}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def load_params(dirpath, params: Sequence[Parameter]) -> None:
    d = Path(dirpath)
    mpath = d / MANIFEST
    if not mpath.is_file():
        raise DataError(f"no manifest at {mpath}")
    entries = {}
    for ln, line in enumerate(mpath.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{mpath}:{ln}: malformed manifest line")
        pid, fname, dims = fields
        entries[pid] = (fname, tuple(int(x) for x in dims.split(",")))
    for p in params:
        if p.id not in entries:
            raise DataError(f"checkpoint mismatch: parameter {p.id!r} missing from manifest")
        fname, dims = entries[p.id]
        if dims != p.data.shape:
            raise DataError(f"checkpoint mismatch: parameter {p.id!r} has shape {dims}, model expects {p.data.shape}")
        arr = read_aptn(d / fname)
        p.data[...] = arr.astype(p.data.dtype, copy=False)
