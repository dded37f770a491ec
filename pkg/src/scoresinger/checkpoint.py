"""Single-file array container used for model checkpoints and corpus tracks.

Layout: 8-byte magic, little-endian uint64 header length, canonical JSON
header, then raw little-endian float32 payloads back to back. The header
holds the array directory (name, shape, byte offset into the payload
section) plus an arbitrary JSON `meta` block for configs and statistics.

Arrays are written sorted by name and the JSON is canonicalized (sorted
keys, no whitespace), so writing the result of `load` reproduces the
original file byte for byte.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .tensor import ShapeError

MAGIC = b"SSCK0001"


class CheckpointError(ValueError):
    """Malformed container file or directory/payload mismatch."""


def save(path, arrays: dict, meta: Optional[dict] = None) -> None:
    """Write named arrays plus a JSON meta block to `path`.

    Arrays are cast to float32; integer masks and id vectors survive the
    round trip exactly as long as their values fit in float32.
    """
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype="<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = {"arrays": entries, "meta": meta if meta is not None else {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for p in payloads:
            f.write(p)


def load(path, expect_shapes: Optional[dict] = None) -> tuple[dict, dict]:
    """Read a container. Returns (arrays by name, meta dict).

    When `expect_shapes` maps names to shapes, every expected array must be
    present with exactly that shape.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    payload = raw[start + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        lo = entry["offset"]
        hi = lo + 4 * count
        if hi > len(payload):
            raise CheckpointError(f"{path}: payload truncated for array '{entry['name']}'")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4", count=count).reshape(shape)
        arrays[entry["name"]] = arr.copy()
    if expect_shapes is not None:
        for name, shape in expect_shapes.items():
            if name not in arrays:
                raise CheckpointError(f"{path}: missing array '{name}'")
            if arrays[name].shape != tuple(shape):
                raise ShapeError(f"{path}: array '{name}' has shape "
                                 f"{arrays[name].shape}, expected {tuple(shape)}")
    return arrays, header.get("meta", {})
