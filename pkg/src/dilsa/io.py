"""Self-describing binary artifacts.

Layout::

    magic (8 bytes) | version (uint32 LE) | header length (uint64 LE)
    | header (UTF-8 JSON) | array payloads, C-order, little-endian

The header holds caller metadata under ``"meta"`` and, under ``"arrays"``, a
list of ``{name, dtype, shape, offset, nbytes}`` entries with offsets relative
to the end of the header. JSON is written with sorted keys and no timestamps,
so identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

VERSION = 1


def write_blob(path: str | Path, magic: bytes, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    entries = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        if a.dtype.byteorder == ">":
            a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        entries.append(
            {"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)}
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def read_blob(path: str | Path, magic: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path}")
    data = path.read_bytes()
    if data[:8] != magic:
        raise ValueError(f"{path}: bad magic {data[:8]!r}, expected {magic!r}")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays
