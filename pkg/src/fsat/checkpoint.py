"""Binary checkpoint container for named tensors plus metadata.

Layout (all little-endian):

    magic   4 bytes  b"FSAT"
    version u32      format version (currently 1)
    metalen u64      length of the UTF-8 JSON metadata block
    meta    bytes    JSON object (sorted keys)
    count   u32      number of tensor records
    record: u16 name length | name UTF-8 | u8 dtype tag | u8 ndim |
            u32 per-dim extents | raw buffer

Round trips are bit-exact; a bad magic or version is rejected before
any tensor buffer is allocated.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"FSAT"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class CheckpointError(IOError):
    pass


def save_checkpoint(path, tensors: Dict[str, np.ndarray], metadata: dict) -> None:
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<Q", len(meta))
    out += meta
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor '{name}'")
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<BB", _TAGS[arr.dtype], arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[_TAGS[arr.dtype]]).tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"truncated checkpoint {self.path}: needed {n} bytes at offset {self.pos}"
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path} (expected {VERSION})")
    (meta_len,) = reader.unpack("<Q")
    metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        tag, ndim = reader.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for tensor '{name}' in {path}")
        shape = reader.unpack(f"<{ndim}I")
        dtype = _DTYPES[tag]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        buf = reader.take(n_bytes)
        tensors[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    if reader.pos != len(reader.raw):
        raise CheckpointError(f"trailing bytes in {path} at offset {reader.pos}")
    return tensors, metadata
