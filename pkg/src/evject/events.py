"""Event streams: data model, CSV/BIN file formats and a synthetic generator."""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from evject.errors import ConfigurationError, ParseError, ValidationError


class Polarity(enum.IntEnum):
    NEG = -1
    POS = 1


POS = Polarity.POS
NEG = Polarity.NEG


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    p: Polarity


class EventStream:
    """Time-ordered events from a ``width`` x ``height`` sensor.

    Columns are stored as numpy arrays (``x``, ``y`` int64, ``t`` float64 seconds,
    ``p`` int8 in {+1, -1}). Construction validates dimensions and sorts by
    timestamp (stable, so file order is kept among equal timestamps).
    """

    __slots__ = ("x", "y", "t", "p", "width", "height", "duration", "label")

    def __init__(self, x, y, t, p, width, height, duration, label=None):
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        p = np.asarray(p).reshape(-1)
        if not (len(x) == len(y) == len(t) == len(p)):
            raise ValidationError("event columns have different lengths")
        if width < 1 or height < 1:
            raise ValidationError(f"invalid sensor dimensions {width}x{height}")
        if not np.isfinite(duration) or duration < 0:
            raise ValidationError(f"invalid duration {duration}")
        if len(x):
            if x.min() < 0 or x.max() >= width or y.min() < 0 or y.max() >= height:
                raise ValidationError(f"event outside sensor dimensions {width}x{height}")
            if not np.all(np.isfinite(t)) or t.min() < 0 or t.max() > duration:
                raise ValidationError(f"timestamp outside [0, {duration}]")
            if not np.all((p == 1) | (p == -1)):
                raise ValidationError("polarity must be +1 or -1")
            if np.any(np.diff(t) < 0):
                order = np.argsort(t, kind="stable")
                x, y, t, p = x[order], y[order], t[order], p[order]
        self.x, self.y, self.t = x, y, t
        self.p = p.astype(np.int8)
        self.width = int(width)
        self.height = int(height)
        self.duration = float(duration)
        self.label = label

    @classmethod
    def from_events(cls, events, width, height, duration, label=None):
        events = list(events)
        return cls(
            [e.x for e in events],
            [e.y for e in events],
            [e.t for e in events],
            [int(e.p) for e in events],
            width,
            height,
            duration,
            label,
        )

    @classmethod
    def empty(cls, width, height, duration, label=None):
        return cls([], [], [], [], width, height, duration, label)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), Polarity(int(self.p[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def events(self):
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.width, self.height, self.duration, self.label)
            == (other.width, other.height, other.duration, other.label)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self):
        return (
            f"EventStream(n={len(self)}, {self.width}x{self.height}, "
            f"duration={self.duration}, label={self.label!r})"
        )

    def with_label(self, label):
        return EventStream(self.x, self.y, self.t, self.p, self.width, self.height, self.duration, label)


# --------------------------------------------------------------------------- file formats

BIN_MAGIC = b"EVS1"
_BIN_HEADER = struct.Struct("<4sIIdQ")
_BIN_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<f8"), ("p", "i1")])


def write_event_file(stream, fmt="BIN"):
    """Serialize a stream as ``CSV`` or ``BIN`` bytes."""
    fmt = fmt.upper()
    if fmt == "BIN":
        if stream.width > 0xFFFF + 1 or stream.height > 0xFFFF + 1:
            raise ValidationError("BIN format limits sensor dimensions to 65536")
        rec = np.empty(len(stream), dtype=_BIN_RECORD)
        rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
        head = _BIN_HEADER.pack(BIN_MAGIC, stream.width, stream.height, stream.duration, len(stream))
        return head + rec.tobytes()
    if fmt == "CSV":
        buf = io.StringIO()
        buf.write(f"{stream.width},{stream.height},{stream.duration!r}\n")
        for x, y, t, p in zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()):
            buf.write(f"{x},{y},{t:.9f},{p}\n")
        return buf.getvalue().encode("utf-8")
    raise ConfigurationError(f"unknown event file format {fmt!r}")


def read_event_file(data, fmt="BIN", label=None):
    """Parse ``CSV`` or ``BIN`` bytes into an :class:`EventStream`."""
    fmt = fmt.upper()
    if fmt == "BIN":
        return _read_bin(bytes(data), label)
    if fmt == "CSV":
        return _read_csv(bytes(data), label)
    raise ConfigurationError(f"unknown event file format {fmt!r}")


def _read_bin(data, label):
    if len(data) < _BIN_HEADER.size:
        raise ParseError("truncated BIN header", offset=len(data))
    magic, width, height, duration, count = _BIN_HEADER.unpack_from(data)
    if magic != BIN_MAGIC:
        raise ParseError("bad BIN magic", offset=0)
    body = len(data) - _BIN_HEADER.size
    if body != count * _BIN_RECORD.itemsize:
        offset = _BIN_HEADER.size + min(body, count * _BIN_RECORD.itemsize) // _BIN_RECORD.itemsize * _BIN_RECORD.itemsize
        raise ParseError(f"BIN body holds {body} bytes, expected {count} records", offset=offset)
    rec = np.frombuffer(data, dtype=_BIN_RECORD, count=count, offset=_BIN_HEADER.size)
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1))
    if len(bad):
        raise ParseError("polarity must be +1 or -1", offset=_BIN_HEADER.size + int(bad[0]) * _BIN_RECORD.itemsize)
    return EventStream(rec["x"], rec["y"], rec["t"], rec["p"], width, height, duration, label)


def _read_csv(data, label):
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("CSV is not valid UTF-8", offset=exc.start) from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError("missing CSV header", line=1)
    head = lines[0].split(",")
    try:
        if len(head) != 3:
            raise ValueError
        width, height, duration = int(head[0]), int(head[1]), float(head[2])
    except ValueError as exc:
        raise ParseError("header must be 'width,height,duration'", line=1) from exc
    xs, ys, ts, ps = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            if len(fields) != 4:
                raise ValueError
            x, y, t, p = int(fields[0]), int(fields[1]), float(fields[2]), int(fields[3])
        except ValueError as exc:
            raise ParseError(f"malformed event record {line!r}", line=lineno) from exc
        if p not in (1, -1):
            raise ParseError(f"polarity must be 1 or -1, got {p}", line=lineno)
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)
    return EventStream(xs, ys, ts, ps, width, height, duration, label)


# --------------------------------------------------------------------------- synthetic data


class ShapeClass(enum.IntEnum):
    BAR = 0
    DISC = 1
    TRIANGLE = 2
    CROSS = 3


@dataclass(frozen=True)
class SyntheticConfig:
    """A rigid shape translating across the sensor.

    ``size`` defaults to 40% of the smaller sensor side; ``start`` is the shape
    center at t=0 and defaults to a path centered on the sensor.
    """

    width: int = 64
    height: int = 64
    duration: float = 1.0
    shape_class: ShapeClass = ShapeClass.BAR
    velocity: tuple = (32.0, 0.0)
    event_rate: float = 200.0
    noise_rate: float = 0.0
    seed: int = 0
    size: float | None = None
    start: tuple | None = None

    def validate(self):
        if self.width < 8 or self.height < 8:
            raise ConfigurationError("width and height must be >= 8")
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if self.event_rate < 0 or self.noise_rate < 0:
            raise ConfigurationError("rates must be non-negative")
        if len(self.velocity) != 2:
            raise ConfigurationError("velocity must be a 2-vector")
        if self.size is not None and self.size <= 0:
            raise ConfigurationError("size must be positive")
        ShapeClass(self.shape_class)


def shape_mask(shape_class, center, size, width, height):
    """Boolean (height, width) mask of pixels whose centers lie inside the shape."""
    ys, xs = np.mgrid[0:height, 0:width]
    dx = xs + 0.5 - center[0]
    dy = ys + 0.5 - center[1]
    half = size / 2.0
    arm = size / 8.0
    shape_class = ShapeClass(shape_class)
    if shape_class is ShapeClass.BAR:
        return (np.abs(dx) <= arm) & (np.abs(dy) <= half)
    if shape_class is ShapeClass.DISC:
        return dx * dx + dy * dy <= half * half
    if shape_class is ShapeClass.CROSS:
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= half)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= half))
    # upward-pointing equilateral triangle centered on its centroid
    h = size * np.sqrt(3.0) / 2.0
    top = -2.0 * h / 3.0
    bottom = h / 3.0
    inside_y = (dy >= top) & (dy <= bottom)
    half_w = (dy - top) / h * half
    return inside_y & (np.abs(dx) <= half_w)


def generate_synthetic_sequence(config):
    """Events of a translating shape: POS on the leading edge, NEG on the trailing edge.

    Time is stepped so the shape moves at most a quarter pixel per step. A pixel
    is on the leading edge while it is inside the shape but was outside one
    pixel-travel-time earlier; it then fires as a Poisson process at
    ``event_rate``. Spurious events are added uniformly at ``noise_rate``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    w, h, dur = config.width, config.height, float(config.duration)
    size = config.size if config.size is not None else 0.4 * min(w, h)
    v = np.asarray(config.velocity, dtype=np.float64)
    speed = float(np.hypot(*v))
    if config.start is None:
        start = np.array([w / 2.0, h / 2.0]) - v * dur / 2.0
    else:
        start = np.asarray(config.start, dtype=np.float64)

    xs, ys, ts, ps = [], [], [], []
    if speed > 0 and config.event_rate > 0:
        lag = 1.0 / speed
        dt = min(0.25 / speed, dur)
        n_steps = int(np.ceil(dur / dt))
        for i in range(n_steps):
            t0 = i * dt
            t1 = min(dur, t0 + dt)
            now = shape_mask(config.shape_class, start + v * t0, size, w, h)
            before = shape_mask(config.shape_class, start + v * (t0 - lag), size, w, h)
            for edge, pol in ((now & ~before, 1), (before & ~now, -1)):
                py, px = np.nonzero(edge)
                if not len(px):
                    continue
                counts = rng.poisson(config.event_rate * (t1 - t0), size=len(px))
                total = int(counts.sum())
                if not total:
                    continue
                xs.append(np.repeat(px, counts))
                ys.append(np.repeat(py, counts))
                ts.append(rng.uniform(t0, t1, size=total))
                ps.append(np.full(total, pol, dtype=np.int8))
    n_noise = rng.poisson(config.noise_rate * dur) if config.noise_rate > 0 else 0
    if n_noise:
        xs.append(rng.integers(0, w, size=n_noise))
        ys.append(rng.integers(0, h, size=n_noise))
        ts.append(rng.uniform(0.0, dur, size=n_noise))
        ps.append(rng.choice(np.array([-1, 1], dtype=np.int8), size=n_noise))
    if xs:
        x, y, t, p = (np.concatenate(c) for c in (xs, ys, ts, ps))
        order = np.argsort(t, kind="stable")
        x, y, t, p = x[order], y[order], t[order], p[order]
    else:
        x = y = t = p = np.empty(0)
    return EventStream(x, y, t, p, w, h, dur, label=int(config.shape_class))


@dataclass(frozen=True)
class DatasetProfile:
    """Randomization ranges for a labeled synthetic corpus."""

    width: int = 32
    height: int = 32
    duration: float = 0.25
    speed_range: tuple = (40.0, 80.0)
    size_range: tuple = (11.0, 15.0)
    event_rate: float = 120.0
    noise_rate: float = 60.0
    classes: tuple = field(default=tuple(ShapeClass))


def synthetic_dataset(n_per_class, seed, profile=None):
    """A class-balanced list of streams with randomized motion, size and start point.

    Sequences are ordered class-major and each draws from its own child seed,
    so the corpus is reproducible from ``seed`` and ``n_per_class``.
    """
    profile = profile or DatasetProfile()
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(profile.classes) * n_per_class)
    streams = []
    for ci, cls in enumerate(profile.classes):
        for j in range(n_per_class):
            child = children[ci * n_per_class + j]
            rng = np.random.default_rng(child)
            angle = rng.uniform(0, 2 * np.pi)
            speed = rng.uniform(*profile.speed_range)
            size = rng.uniform(*profile.size_range)
            v = (speed * np.cos(angle), speed * np.sin(angle))
            jitter = rng.uniform(-2.0, 2.0, size=2)
            center = np.array([profile.width / 2.0, profile.height / 2.0]) + jitter
            start = center - np.asarray(v) * profile.duration / 2.0
            cfg = SyntheticConfig(
                width=profile.width,
                height=profile.height,
                duration=profile.duration,
                shape_class=ShapeClass(cls),
                velocity=v,
                event_rate=profile.event_rate,
                noise_rate=profile.noise_rate,
                seed=int(rng.integers(0, 2**31 - 1)),
                size=size,
                start=tuple(start),
            )
            streams.append(generate_synthetic_sequence(cfg))
    return streams
