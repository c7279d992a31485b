"""Checkpoint files: a text manifest plus a little-endian float32 blob.

The manifest lists one tensor per line (name and shape); the blob holds the
tensors' data concatenated in manifest order. Round-trips are bit-exact for
float32 inputs.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

FORMAT_LINE = "hopqa-checkpoint 1"


class CheckpointError(ValueError):
    pass


def save_tensors(prefix: str, named: Mapping[str, np.ndarray],
                 meta: Mapping[str, str] | None = None) -> None:
    """Write ``<prefix>.manifest`` and ``<prefix>.bin``."""
    lines = [FORMAT_LINE]
    for key, value in (meta or {}).items():
        if any(c.isspace() for c in key):
            raise CheckpointError(f"meta key may not contain whitespace: {key!r}")
        lines.append(f"meta {key} {value}")
    blobs = []
    for name, arr in named.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name may not contain whitespace: {name!r}")
        arr = np.asarray(arr)
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "1"
        lines.append(f"tensor {name} {shape}")
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    with open(prefix + ".manifest", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(prefix + ".bin", "wb") as fh:
        fh.write(b"".join(blobs))


def load_tensors(prefix: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read a checkpoint back; returns (name -> float32 array, meta)."""
    with open(prefix + ".manifest", "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != FORMAT_LINE:
        raise CheckpointError(f"{prefix}.manifest: unrecognized format line")
    meta: dict[str, str] = {}
    entries: list[tuple[str, tuple[int, ...]]] = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        kind, rest = ln.split(" ", 1)
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            name, _, shape_s = rest.rpartition(" ")
            shape = tuple(int(d) for d in shape_s.split("x"))
            entries.append((name, shape))
        else:
            raise CheckpointError(f"{prefix}.manifest: unknown record {kind!r}")
    with open(prefix + ".bin", "rb") as fh:
        blob = fh.read()
    out: dict[str, np.ndarray] = {}
    ofs = 0
    for name, shape in entries:
        n = int(np.prod(shape))
        nbytes = n * 4
        if ofs + nbytes > len(blob):
            raise CheckpointError(f"{prefix}.bin: truncated at tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=ofs).reshape(shape)
        out[name] = arr.copy()
        ofs += nbytes
    if ofs != len(blob):
        raise CheckpointError(f"{prefix}.bin: {len(blob) - ofs} trailing bytes")
    return out, meta
