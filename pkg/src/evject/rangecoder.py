"""Integer range coder over 16-bit quantized frequency tables.

The coder is the carry-propagating "low + cache" design: the encoder keeps
``low`` in a 64-bit window plus one pending carry, and the decoder tracks
``code - low``. Frequencies sum to 2**16. The last alphabet symbol absorbs
the truncation leftover of ``range >> 16`` so no code space is lost.

The flush emits only the leading bytes of a value inside the final interval;
trailing zero bytes are dropped and the decoder reads zeros past the end.
Payload lengths are carried by the container, which also checksums them.
"""

from __future__ import annotations

import bisect

import numpy as np
from scipy.special import ndtr

from evject.errors import DecodeError, EncodingError, ValidationError

PRECISION = 16
TOTAL = 1 << PRECISION
ALPHABET_BOUND = 64

_WIDTH = 64
_MASK = (1 << _WIDTH) - 1
_TOP = 1 << (_WIDTH - 8)
_NBYTES = _WIDTH // 8


def quantize_frequencies(probs):
    """Integer frequencies from a (..., n) array of probabilities.

    Each symbol gets ``1 + floor(p * (2**16 - n))``; the remainder goes to the
    most probable symbol, so every row sums to 2**16 exactly.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[-1]
    if n < 1 or n > TOTAL // 2:
        raise ValidationError(f"alphabet size {n} out of range")
    probs = np.where(np.isfinite(probs) & (probs > 0), probs, 0.0)
    mass = probs.sum(axis=-1, keepdims=True)
    probs = np.where(mass > 0, probs / np.where(mass > 0, mass, 1.0), 1.0 / n)
    freq = 1 + np.floor(probs * (TOTAL - n)).astype(np.int64)
    freq = np.minimum(freq, TOTAL - n + 1)
    rest = TOTAL - freq.sum(axis=-1)
    top = np.argmax(probs, axis=-1)
    np.put_along_axis(freq, top[..., None], np.take_along_axis(freq, top[..., None], -1) + rest[..., None], -1)
    return freq


class SymbolModel:
    """Quantized distribution over the integers ``lo .. lo + n - 1``."""

    __slots__ = ("lo", "freq", "cum")

    def __init__(self, freq, lo=-ALPHABET_BOUND):
        freq = np.asarray(freq, dtype=np.int64)
        if freq.ndim != 1 or np.any(freq < 1) or int(freq.sum()) != TOTAL:
            raise ValidationError("frequencies must be >= 1 and sum to 2**16")
        self.lo = int(lo)
        self.freq = freq
        self.cum = np.concatenate([[0], np.cumsum(freq)])

    @classmethod
    def from_probabilities(cls, probs, lo=-ALPHABET_BOUND):
        return cls(quantize_frequencies(probs), lo)

    @property
    def hi(self):
        return self.lo + len(self.freq) - 1

    def probability(self, symbol):
        return self.freq[symbol - self.lo] / TOTAL

    def __eq__(self, other):
        return isinstance(other, SymbolModel) and self.lo == other.lo and np.array_equal(self.freq, other.freq)


class ModelTable:
    """A batch of models sharing one alphabet: row ``i`` codes symbol ``i``."""

    def __init__(self, freq, lo=-ALPHABET_BOUND):
        freq = np.asarray(freq, dtype=np.int64)
        if freq.ndim != 2:
            raise ValidationError("frequency table must be 2-D")
        if freq.size and (np.any(freq < 1) or np.any(freq.sum(axis=1) != TOTAL)):
            raise ValidationError("frequencies must be >= 1 and sum to 2**16")
        self.lo = int(lo)
        self.freq = freq
        self.cum = np.concatenate([np.zeros((len(freq), 1), np.int64), np.cumsum(freq, axis=1)], axis=1)

    @classmethod
    def from_models(cls, models):
        models = list(models)
        if not models:
            return cls(np.zeros((0, 1), np.int64))
        lo = models[0].lo
        if any(m.lo != lo or len(m.freq) != len(models[0].freq) for m in models):
            raise ValidationError("models in one table must share an alphabet")
        return cls(np.stack([m.freq for m in models]), lo)

    def __len__(self):
        return len(self.freq)

    def ideal_bits(self, symbols):
        """Sum of -log2 of the quantized probabilities of ``symbols``."""
        idx = np.asarray(symbols, dtype=np.int64) - self.lo
        f = self.freq[np.arange(len(idx)), idx]
        return float(np.sum(PRECISION - np.log2(f)))


def _as_table(models):
    if isinstance(models, ModelTable):
        return models
    if isinstance(models, SymbolModel):
        raise ValidationError("pass one model per symbol (a list or ModelTable)")
    return ModelTable.from_models(models)


def gaussian_table(sigma, bound=ALPHABET_BOUND):
    """Zero-mean Gaussian models on [-bound, bound], one per entry of ``sigma``."""
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    v = np.abs(np.arange(-bound, bound + 1, dtype=np.float64))[None, :]
    probs = ndtr((0.5 - v) / sigma) - ndtr((-0.5 - v) / sigma)
    return ModelTable(quantize_frequencies(probs), -bound)


def logistic_table(loc, scale, bound=ALPHABET_BOUND):
    """Logistic models on [-bound, bound]; ``loc``/``scale`` broadcast per symbol."""
    loc = np.asarray(loc, dtype=np.float64).reshape(-1, 1)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1, 1)
    v = np.arange(-bound, bound + 1, dtype=np.float64)[None, :]
    d = -np.abs(v - loc)
    probs = 0.5 * (np.tanh(0.5 * (d + 0.5) / scale) - np.tanh(0.5 * (d - 0.5) / scale))
    return ModelTable(quantize_frequencies(probs), -bound)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < (0xFF << (_WIDTH - 8)) or low > _MASK:
            carry = low >> _WIDTH
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> (_WIDTH - 8)) & 0xFF
        self.cache_size += 1
        self.low = (low << 8) & _MASK

    def encode(self, start, freq, last):
        r = self.range >> PRECISION
        self.low += r * start
        self.range = self.range - r * start if last else r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self):
        # pick the value in [low, low + range) with the most trailing zero bits
        lo, hi = self.low, self.low + self.range
        for k in range(_WIDTH, -1, -1):
            v = ((lo + (1 << k) - 1) >> k) << k
            if v < hi:
                break
        self.low = v
        for _ in range(_NBYTES + 1):
            self._shift_low()
        data = bytes(self.out[1:])  # the first byte is always zero
        return data.rstrip(b"\x00")


def range_encode(symbols, models):
    """Encode integer ``symbols``; ``models[i]`` codes ``symbols[i]``."""
    table = _as_table(models)
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if len(symbols) != len(table):
        raise EncodingError(f"{len(symbols)} symbols but {len(table)} models")
    if not len(symbols):
        return b""
    idx = symbols - table.lo
    n = table.freq.shape[1]
    bad = (idx < 0) | (idx >= n)
    if bad.any():
        s = int(symbols[np.flatnonzero(bad)[0]])
        raise EncodingError(f"symbol {s} outside alphabet [{table.lo}, {table.lo + n - 1}]")
    rows = np.arange(len(idx))
    starts = table.cum[rows, idx].tolist()
    freqs = table.freq[rows, idx].tolist()
    lasts = (idx == n - 1).tolist()
    enc = RangeEncoder()
    for c, f, last in zip(starts, freqs, lasts):
        enc.encode(c, f, last)
    return enc.finish()


def range_decode(data, models, n=None):
    """Decode ``n`` symbols (default: one per model)."""
    table = _as_table(models)
    n = len(table) if n is None else int(n)
    if n > len(table):
        raise DecodeError(f"{n} symbols requested but only {len(table)} models")
    if n == 0:
        if data:
            raise DecodeError("trailing bytes after an empty stream")
        return np.zeros(0, dtype=np.int64)
    data = bytes(data)
    size = len(data)
    pos = _NBYTES
    code = int.from_bytes(data[:_NBYTES].ljust(_NBYTES, b"\x00"), "big")
    rng = _MASK
    nsym = table.freq.shape[1]
    cum_rows = table.cum[:n].tolist()
    out = [0] * n
    for i in range(n):
        cum = cum_rows[i]
        r = rng >> PRECISION
        t = code // r
        if t >= TOTAL:
            s = nsym - 1
        else:
            s = bisect.bisect_right(cum, t) - 1
        start = cum[s]
        code -= r * start
        rng = rng - r * start if s == nsym - 1 else r * (cum[s + 1] - start)
        if code >= rng:
            raise DecodeError("corrupt range-coded payload")
        while rng < _TOP:
            byte = data[pos] if pos < size else 0
            pos += 1
            code = (code << 8) | byte
            rng <<= 8
        out[i] = s
    if pos < size:
        raise DecodeError(f"{size - pos} unread bytes after the last symbol")
    return np.asarray(out, dtype=np.int64) + table.lo
