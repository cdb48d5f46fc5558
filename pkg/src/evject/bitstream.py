"""The ``.dlje`` container: header, per-block records, trailing CRC32.

Layout (little-endian)::

    magic "DLJE" | version u8 | tsf u32 | dims 3*u32 | block_size u16
    | model_id u8 | mode u8 | n_blocks u32 | n_input_events u64
    then per block:
    origin 3*u32 | k u32 | [n_pos u32 | n_neg u32 if mode == 2]
    | hyper_len u32 | hyper bytes | main_len u32 | main bytes
    then CRC32 of everything before it.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

from evject.errors import CorruptionError, FormatError, LengthError, ValidationError

MAGIC = b"DLJE"
VERSION = 1

_HEADER = struct.Struct("<4sBI3IHBBIQ")
_RECORD = struct.Struct("<3II")
_COUNTS = struct.Struct("<II")
_U32 = struct.Struct("<I")


class BinarizationMode(enum.IntEnum):
    QUB = 0
    COB = 1
    COB_SPLIT = 2
    CIB = 3


@dataclass(frozen=True)
class BitstreamHeader:
    tsf: int
    dims: tuple
    block_size: int
    model_id: int
    mode: BinarizationMode
    n_blocks: int
    n_input_events: int
    version: int = VERSION

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        try:
            object.__setattr__(self, "mode", BinarizationMode(self.mode))
        except ValueError:
            raise ValidationError(f"unknown binarization mode {self.mode}") from None
        if not 0 <= self.model_id <= 255:
            raise ValidationError("model_id must fit in a byte")


@dataclass(frozen=True)
class BlockRecord:
    origin: tuple
    k: int
    hyper: bytes
    main: bytes
    n_pos: int | None = None
    n_neg: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(int(v) for v in self.origin))


def write_bitstream(header, records):
    records = list(records)
    if len(records) != header.n_blocks:
        raise ValidationError(f"header announces {header.n_blocks} blocks, got {len(records)}")
    split = header.mode is BinarizationMode.COB_SPLIT
    parts = [
        _HEADER.pack(
            MAGIC, header.version, header.tsf, *header.dims, header.block_size,
            header.model_id, int(header.mode), header.n_blocks, header.n_input_events,
        )
    ]
    for rec in records:
        parts.append(_RECORD.pack(*rec.origin, rec.k))
        if split:
            if rec.n_pos is None or rec.n_neg is None:
                raise ValidationError("split-count mode needs n_pos and n_neg per block")
            parts.append(_COUNTS.pack(rec.n_pos, rec.n_neg))
        for payload in (rec.hyper, rec.main):
            parts.append(_U32.pack(len(payload)))
            parts.append(bytes(payload))
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def read_bitstream(data):
    """Parse and validate a ``.dlje`` byte string into ``(header, records)``."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("not a DLJE bitstream (bad magic)")
    if len(data) < 5:
        raise LengthError("truncated header")
    if data[4] != VERSION:
        raise FormatError(f"unsupported bitstream version {data[4]}")
    if len(data) < _HEADER.size + 4:
        raise LengthError(f"stream of {len(data)} bytes is shorter than the header")
    body, (crc,) = data[:-4], _U32.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("CRC32 mismatch")
    _, version, tsf, dx, dy, dz, block_size, model_id, mode, n_blocks, n_events = _HEADER.unpack_from(body)
    try:
        mode = BinarizationMode(mode)
    except ValueError:
        raise FormatError(f"unknown binarization mode {mode}") from None
    if tsf < 1 or min(dx, dy, dz) < 1 or block_size < 1:
        raise FormatError("header has zero tsf, dims or block size")
    header = BitstreamHeader(tsf, (dx, dy, dz), block_size, model_id, mode, n_blocks, n_events, version)
    split = mode is BinarizationMode.COB_SPLIT
    pos = _HEADER.size
    records = []
    for _ in range(n_blocks):
        pos, fields = _take(body, pos, _RECORD)
        n_pos = n_neg = None
        if split:
            pos, (n_pos, n_neg) = _take(body, pos, _COUNTS)
        payloads = []
        for _ in range(2):
            pos, (length,) = _take(body, pos, _U32)
            if pos + length > len(body):
                raise LengthError("payload runs past the end of the stream")
            payloads.append(body[pos : pos + length])
            pos += length
        records.append(BlockRecord(fields[:3], fields[3], payloads[0], payloads[1], n_pos, n_neg))
    if pos != len(body):
        raise LengthError(f"{len(body) - pos} unexpected bytes after the last block")
    return header, records


def _take(body, pos, fmt):
    if pos + fmt.size > len(body):
        raise LengthError("block record runs past the end of the stream")
    return pos + fmt.size, fmt.unpack_from(body, pos)
