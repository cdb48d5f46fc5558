"""Lossless anchor codec for polarized point clouds (``.plc1``).

Points are sorted by (z, y, x) and coded as tuple deltas: ``dz`` first; if it
is zero, ``dy``; if that is zero too, ``dx - 1``; coordinates below the first
non-zero delta are sent as absolute values. Integers are Exp-Golomb
binarized and every bin goes through an adaptive binary range coder; the
polarity bit is conditioned on the previous polarity bit.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from evject.conversion import PolarizedPointCloud
from evject.errors import CorruptionError, DecodeError, FormatError, LengthError, ValidationError

MAGIC = b"PLC1"
VERSION = 1
_HEADER = struct.Struct("<4sB3IIQ")

_PROB_BITS = 12
_PROB_ONE = 1 << _PROB_BITS
_ADAPT = 5
_TOP = 1 << 24
_MAX_PREFIX = 40


class _BinEncoder:
    def __init__(self):
        self.low = 0
        self.range = 0xFFFFFFFF
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift(self):
        if self.low < 0xFF000000 or self.low > 0xFFFFFFFF:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & 0xFFFFFFFF

    def bit(self, probs, ctx, b):
        p = probs[ctx]
        bound = (self.range >> _PROB_BITS) * p
        if b:
            self.low += bound
            self.range -= bound
            probs[ctx] = p - (p >> _ADAPT)
        else:
            self.range = bound
            probs[ctx] = p + ((_PROB_ONE - p) >> _ADAPT)
        while self.range < _TOP:
            self.range <<= 8
            self._shift()

    def finish(self):
        for _ in range(5):
            self._shift()
        return bytes(self.out[1:])


class _BinDecoder:
    def __init__(self, data):
        self.data = data
        self.pos = 4
        if len(data) < 4:
            raise DecodeError("payload shorter than the coder state")
        self.code = int.from_bytes(data[:4], "big")
        self.range = 0xFFFFFFFF

    def bit(self, probs, ctx):
        p = probs[ctx]
        bound = (self.range >> _PROB_BITS) * p
        if self.code < bound:
            self.range = bound
            probs[ctx] = p + ((_PROB_ONE - p) >> _ADAPT)
            b = 0
        else:
            self.code -= bound
            self.range -= bound
            probs[ctx] = p - (p >> _ADAPT)
            b = 1
        while self.range < _TOP:
            if self.pos >= len(self.data):
                raise DecodeError("payload truncated")
            self.code = ((self.code << 8) | self.data[self.pos]) & 0xFFFFFFFF
            self.pos += 1
            self.range <<= 8
        return b


class _Contexts:
    """Adaptive probabilities for one syntax element: Exp-Golomb prefix and suffix bins."""

    def __init__(self):
        self.prefix = [_PROB_ONE // 2] * (_MAX_PREFIX + 1)
        self.suffix = [_PROB_ONE // 2] * (_MAX_PREFIX + 1)


def _put_uint(enc, cx, v):
    v += 1
    n = v.bit_length() - 1
    for i in range(n):
        enc.bit(cx.prefix, i, 1)
    enc.bit(cx.prefix, n, 0)
    for i in range(n - 1, -1, -1):
        enc.bit(cx.suffix, i, (v >> i) & 1)


def _get_uint(dec, cx):
    n = 0
    while dec.bit(cx.prefix, n):
        n += 1
        if n >= _MAX_PREFIX:
            raise DecodeError("Exp-Golomb prefix too long")
    v = 1
    for i in range(n - 1, -1, -1):
        v = (v << 1) | dec.bit(cx.suffix, i)
    return v - 1


class _Model:
    def __init__(self):
        self.dz = _Contexts()
        self.dy = _Contexts()
        self.dx = _Contexts()
        self.ay = _Contexts()
        self.ax = _Contexts()
        self.first = _Contexts()
        self.pol = [_PROB_ONE // 2] * 2


def lossless_encode(pc):
    """Encode a polarized point cloud to ``.plc1`` bytes."""
    dims = pc.dims
    header = _HEADER.pack(MAGIC, VERSION, *dims, pc.tsf, len(pc))
    enc = _BinEncoder()
    m = _Model()
    coords = pc.coords.tolist()
    pols = (pc.polarity > 0).astype(int).tolist()
    prev = None
    prev_bit = 0
    for (x, y, z), b in zip(coords, pols):
        if prev is None:
            for v in (z, y, x):
                _put_uint(enc, m.first, v)
        else:
            px, py, pz = prev
            dz = z - pz
            _put_uint(enc, m.dz, dz)
            if dz:
                _put_uint(enc, m.ay, y)
                _put_uint(enc, m.ax, x)
            else:
                dy = y - py
                _put_uint(enc, m.dy, dy)
                if dy:
                    _put_uint(enc, m.ax, x)
                else:
                    _put_uint(enc, m.dx, x - px - 1)
        enc.bit(m.pol, prev_bit, b)
        prev_bit = b
        prev = (x, y, z)
    payload = enc.finish() if coords else b""
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body))


def lossless_decode(data):
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("not a PLC1 stream (bad magic)")
    if len(data) < _HEADER.size + 4:
        raise LengthError("truncated PLC1 header")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CorruptionError("PLC1 CRC32 mismatch")
    _, version, dx_, dy_, dz_, tsf, count = _HEADER.unpack_from(body)
    if version != VERSION:
        raise FormatError(f"unsupported PLC1 version {version}")
    dims = (dx_, dy_, dz_)
    if min(dims) < 1 or tsf < 1:
        raise FormatError("invalid dims or tsf in PLC1 header")
    if count > dx_ * dy_ * dz_:
        raise FormatError("point count exceeds the grid")
    payload = body[_HEADER.size :]
    if count == 0:
        if payload:
            raise DecodeError("unexpected payload for an empty cloud")
        return PolarizedPointCloud(np.zeros((0, 3), np.int64), np.zeros(0, np.int8), dims, tsf)
    dec = _BinDecoder(payload)
    m = _Model()
    coords = np.empty((count, 3), dtype=np.int64)
    pols = np.empty(count, dtype=np.int8)
    prev = None
    prev_bit = 0
    for i in range(count):
        if prev is None:
            z = _get_uint(dec, m.first)
            y = _get_uint(dec, m.first)
            x = _get_uint(dec, m.first)
        else:
            px, py, pz = prev
            dz = _get_uint(dec, m.dz)
            z = pz + dz
            if dz:
                y = _get_uint(dec, m.ay)
                x = _get_uint(dec, m.ax)
            else:
                dy = _get_uint(dec, m.dy)
                y = py + dy
                x = _get_uint(dec, m.ax) if dy else px + 1 + _get_uint(dec, m.dx)
        if x >= dx_ or y >= dy_ or z >= dz_:
            raise DecodeError("decoded point outside the grid")
        b = dec.bit(m.pol, prev_bit)
        prev_bit = b
        coords[i] = (x, y, z)
        pols[i] = 1 if b else -1
        prev = (x, y, z)
    if dec.pos != len(payload):
        raise DecodeError(f"{len(payload) - dec.pos} unread payload bytes")
    try:
        return PolarizedPointCloud(coords, pols, dims, tsf)
    except ValidationError as exc:
        raise DecodeError(str(exc)) from exc
