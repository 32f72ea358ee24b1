"""MORS1 binary tensor container and the named checkpoint archive.

Tensor payload::

    b"MORS1\\x00" | u8 dtype (1=f32, 2=f64) | u8 rank | rank x u64 dims | raw LE scalars

Archive::

    u32 count | count x (u16 name length | UTF-8 name | tensor payload)

All integers little-endian.
"""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"MORS1\x00"
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_BY_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class FormatError(ValueError):
    pass


def write_tensor(f: BinaryIO, arr) -> None:
    a = np.asarray(arr)
    if a.dtype not in _BY_DTYPE:
        raise FormatError(f"MORS1 stores float32/float64 only, got {a.dtype}")
    code = _BY_DTYPE[a.dtype]
    if a.ndim > 255:
        raise FormatError("rank exceeds 255")
    f.write(MAGIC)
    f.write(struct.pack("<BB", code, a.ndim))
    f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    f.write(np.ascontiguousarray(a, dtype=_CODES[code]).tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated MORS1 data: wanted {n} bytes, got {len(b)}")
    return b


def read_tensor(f: BinaryIO) -> np.ndarray:
    if _read_exact(f, len(MAGIC)) != MAGIC:
        raise FormatError("bad MORS1 magic")
    code, rank = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _CODES:
        raise FormatError(f"unknown MORS1 dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank)) if rank else ()
    dt = _CODES[code]
    n = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(f, n * dt.itemsize), dtype=dt)
    return data.reshape(dims).astype(dt.newbyteorder("="), copy=True)


def encode(arr) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def decode(blob: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(blob))


def save_tensor(path, arr) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def save_archive(path, entries: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            write_tensor(f, arr)
    os.replace(tmp, path)


def load_archive(path) -> dict:
    out = {}
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            (n,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, n).decode("utf-8")
            out[name] = read_tensor(f)
        if f.read(1):
            raise FormatError("trailing bytes after archive entries")
    return out
