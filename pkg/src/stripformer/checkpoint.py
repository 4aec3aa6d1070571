"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SPFM1"
    u32 header length, UTF-8 JSON header
    u32 tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  dtype code (0 = float32, 1 = float64)
        u8  ndim, then ndim x u32 extents
        raw little-endian element data
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SPFM1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_checkpoint(path, arrays, header):
    """Write ``arrays`` (name -> ndarray, in iteration order) with a JSON ``header``."""
    chunks = [MAGIC]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(head)))
    chunks.append(head)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path):
    """Parse a checkpoint completely; returns ``(header, arrays)`` or raises CheckpointError."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (hlen,) = r.unpack("<I", "header length")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    arrays = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: tensor {i} has a malformed name") from exc
        code, ndim = r.unpack("<BB", f"dtype of {name!r}")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name!r}")
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw = r.take(nbytes, f"data of {name!r}")
        if name in arrays:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes after last tensor")
    return header, arrays
