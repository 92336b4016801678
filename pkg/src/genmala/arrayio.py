"""Dependency-free binary array container used for all persisted arrays.

Layout (little-endian):

    magic    4 bytes  b"ARR1"
    u8       dtype tag: 0 = f64, 1 = c128 (interleaved f64 pairs), 2 = i64
    u8       rank
    u64*rank dims
    payload  row-major values
    u32      CRC-32 (zlib) of all preceding bytes

Bit-exact across platforms, so golden tests can compare files directly.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from genmala.exceptions import ConfigurationError

MAGIC = b"ARR1"

_TAGS = {0: "<f8", 1: "<c16", 2: "<i8"}
_KINDS = {"f": 0, "c": 1, "i": 2, "u": 2, "b": 2}


def save_array(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    tag = _KINDS.get(arr.dtype.kind)
    if tag is None:
        raise ConfigurationError(f"cannot store arrays of dtype {arr.dtype}")
    data = np.ascontiguousarray(arr, dtype=_TAGS[tag])
    blob = MAGIC + struct.pack("<BB", tag, data.ndim)
    blob += struct.pack(f"<{data.ndim}Q", *data.shape)
    blob += data.tobytes()
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise OSError(f"{path}: not an ARR1 array file")
    stored, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise OSError(f"{path}: array checksum mismatch")
    tag, rank = struct.unpack("<BB", blob[4:6])
    if tag not in _TAGS:
        raise OSError(f"{path}: unknown dtype tag {tag}")
    dims = struct.unpack(f"<{rank}Q", blob[6:6 + 8 * rank])
    payload = blob[6 + 8 * rank:-4]
    arr = np.frombuffer(payload, dtype=_TAGS[tag])
    if arr.size != int(np.prod(dims, dtype=np.int64)):
        raise OSError(f"{path}: payload does not match dims {dims}")
    return arr.reshape(dims).copy()
