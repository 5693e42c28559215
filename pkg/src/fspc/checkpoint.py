"""Flat binary parameter container with an embedded JSON index.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(`config` plus name -> shape/offset), then the raw float64 little-endian
tensor payload. Offsets are relative to the payload start.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"FSPCKPT1"


def save_checkpoint(path, tensors: dict, config: dict | None = None):
    """Write named float64 tensors; iteration order is name-sorted."""
    names = sorted(tensors)
    index = {}
    blobs = []
    offset = 0
    for name in names:
        arr = np.asarray(tensors[name], dtype="<f8")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())  # C-order bytes regardless of layout
        offset += arr.nbytes
    header = json.dumps({"config": config or {}, "tensors": index},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return (tensors, config) from a container file."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path} is not a parameter checkpoint")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DataError(f"corrupt checkpoint index in {path}: {err}") from err
    payload = raw[16 + header_len:]
    tensors = {}
    for name, meta in header["tensors"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return tensors, header.get("config", {})
