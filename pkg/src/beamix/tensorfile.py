"""Minimal binary container: a JSON header followed by raw little-endian arrays.

Layout::

    b"BMXT" | uint32 header length | UTF-8 JSON header | array payloads

The header carries user metadata under ``"meta"`` and an ``"arrays"`` list
describing name, dtype, shape and byte offset of every payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"BMXT"


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such tensor file: {path}")
    data = path.read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a tensor file")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    base = 8 + hlen
    arrays = {}
    for e in header.get("arrays", []):
        start = base + e["offset"]
        stop = start + e["nbytes"]
        if stop > len(data):
            raise FormatError(f"{path}: truncated payload for {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(data[start:stop], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header.get("meta", {})
