"""Self-describing binary container: JSON header followed by float32 data.

Byte layout::

    bytes 0..7    magic b"CMBLOB1\\n"
    bytes 8..15   header length H, unsigned 64-bit little-endian
    next H bytes  header, UTF-8 JSON (sorted keys, no whitespace)
    remainder     every array back to back as little-endian float32

The header holds ``{"arrays": [{"name", "shape", "offset", "count"}, ...],
"meta": {...}}`` where ``offset``/``count`` are in float32 elements from the
start of the payload. Writing the same arrays and meta twice yields identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from contextmeta.errors import DataError

MAGIC = b"CMBLOB1\n"
_LE_F32 = np.dtype("<f4")


def dumps(arrays, meta=None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype=_LE_F32)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.reshape(-1).tobytes())
        offset += a.size
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":"))
    hbytes = header.encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)


def loads(data: bytes, source="<bytes>"):
    if data[:8] != MAGIC:
        raise DataError("not a contextmeta blob (bad magic)", source)
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt blob header ({exc})", source) from exc
    payload = np.frombuffer(data, dtype=_LE_F32, offset=16 + hlen)
    arrays = {}
    for e in header["arrays"]:
        flat = payload[e["offset"]:e["offset"] + e["count"]]
        if flat.size != e["count"]:
            raise DataError(f"truncated array {e['name']!r}", source)
        arrays[e["name"]] = flat.astype(np.float32).reshape(e["shape"])
    return arrays, header["meta"]


def save(path, arrays, meta=None) -> str:
    """Write a blob and return the sha256 hex digest of its bytes."""
    data = dumps(arrays, meta)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read blob ({exc.strerror})", str(path)) from exc
    return loads(data, str(path))


def digest(arrays, meta=None) -> str:
    return hashlib.sha256(dumps(arrays, meta)).hexdigest()
