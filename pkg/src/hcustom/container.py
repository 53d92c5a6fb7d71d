"""Self-describing container for named dense arrays.

Layout: 8-byte magic, 8-byte little-endian header length, a canonical JSON
header (sorted keys, no whitespace) describing every array's name, dtype,
shape, and byte offset plus a free-form `meta` record, then the raw array
bytes back to back in header order.  Writing the same arrays and meta twice
produces byte-identical files, which the determinism acceptance criterion
relies on.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

MAGIC = b"HCARR1\x00\x00"


class ContainerError(ValueError):
    pass


def save_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write named arrays + JSON meta atomically (temp file then rename)."""
    entries = []
    blobs = []
    offset = 0
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name])
        buf = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(buf),
        })
        blobs.append(buf)
        offset += len(buf)
    header = json.dumps({"arrays": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(len(header).to_bytes(8, "little"))
            f.write(header)
            for buf in blobs:
                f.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ContainerError(f"{path}: not a container file (bad magic)")
        hlen = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hlen).decode("utf-8"))
        body = f.read()
    arrays = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ContainerError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]
