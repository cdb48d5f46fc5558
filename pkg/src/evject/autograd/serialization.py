"""Weight file I/O.

Layout (little-endian): magic ``EVWT``, u32 version, u32 tensor count, then
per tensor: u32 name length, UTF-8 name, u32 rank, rank x u32 dims, float32 data.
"""

from __future__ import annotations

import struct

import numpy as np

from evject.errors import FormatError, LengthError

MAGIC = b"EVWT"
VERSION = 1


def dump_weights(tensors):
    """Serialize a name -> array mapping (insertion order is preserved)."""
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr), dtype="<f4")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    return bytes(out)


def load_weights(data):
    """Parse bytes written by :func:`dump_weights` into a name -> float32 array dict."""
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise LengthError(f"weight file truncated at offset {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("not a weight file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        tensors[name] = arr
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after weight tensors")
    return tensors
