"""Checkpoint container.

Layout: 8-byte magic "MAGSCKPT", u32 version, u64 manifest length, UTF-8
JSON manifest, then the raw array blobs concatenated in manifest order
(little-endian). Model arrays are stored float32; training state that must
resume bit-identically (optimizer moments, raw parameters, RNG) is stored
float64, with the dtype recorded per array in the manifest.

Files are byte-stable: identical state serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CorruptBlob, VersionMismatch

MAGIC = b"MAGSCKPT"
VERSION = 1

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


def save_checkpoint(path, stage: str, arrays: dict, meta: dict) -> None:
    """arrays: ordered {name: ndarray}; dtype preserved for f4/f8/i8."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            code = "f4"
        elif arr.dtype in (np.int64, np.int32):
            code = "i8"
            arr = arr.astype(np.int64)
        else:
            code = "f8"
            arr = arr.astype(np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(arr.astype(_DTYPES[code]).tobytes())
    manifest = {
        "stage": stage,
        "arrays": entries,
        "meta": meta,
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    """Returns (stage, arrays dict, meta dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise VersionMismatch(f"{path}: bad magic {raw[:8]!r}")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    (mlen,) = struct.unpack("<Q", raw[12:20])
    if len(raw) < 20 + mlen:
        raise CorruptBlob(f"{path}: truncated manifest")
    manifest = json.loads(raw[20:20 + mlen].decode("utf-8"))
    offset = 20 + mlen
    arrays = {}
    for entry in manifest["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise CorruptBlob(f"{path}: blob '{entry['name']}' truncated")
        arr = np.frombuffer(raw[offset:offset + nbytes], dt).reshape(entry["shape"])
        if entry["dtype"] == "f8":
            arr = arr.astype(np.float64)
        elif entry["dtype"] == "i8":
            arr = arr.astype(np.int64)
        else:
            arr = arr.astype(np.float32)
        arrays[entry["name"]] = arr
        offset += nbytes
    if offset != len(raw):
        raise CorruptBlob(f"{path}: {len(raw) - offset} trailing bytes")
    return manifest["stage"], arrays, manifest["meta"]
