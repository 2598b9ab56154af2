"""Deterministic binary container for array dumps.

Layout: magic line, one JSON manifest line (array names, dtypes, shapes,
offsets, plus free-form metadata), then the raw little-endian array payloads
back to back.  Byte-for-byte reproducible for identical inputs, unlike
zip-based formats that embed timestamps.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"CMSPHERE-BIN-1\n"


def pack_arrays(arrays, meta=None):
    """Serialize {name: ndarray} plus JSON-able metadata to bytes."""
    manifest = {"meta": meta or {}, "arrays": []}
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        buf = arr.astype(dt, copy=False).tobytes()
        manifest["arrays"].append(
            {"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset}
        )
        payloads.append(buf)
        offset += len(buf)
    head = MAGIC + json.dumps(manifest, sort_keys=True).encode() + b"\n"
    return head + b"".join(payloads)


def unpack_arrays(data):
    """Inverse of pack_arrays: returns ({name: ndarray}, meta)."""
    if not data.startswith(MAGIC):
        raise ValueError("not a cmsphere binary container")
    rest = data[len(MAGIC):]
    nl = rest.index(b"\n")
    manifest = json.loads(rest[:nl].decode())
    body = rest[nl + 1:]
    arrays = {}
    for entry in manifest["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        n = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        raw = body[entry["offset"]: entry["offset"] + max(n, 0)]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return arrays, manifest["meta"]
