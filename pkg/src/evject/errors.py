"""Exception hierarchy shared by all evject modules."""


class EvjectError(Exception):
    """Base class for every error raised by evject."""


class ConfigurationError(EvjectError):
    """Invalid configuration, missing model, or degenerate dataset."""


class ValidationError(EvjectError):
    """A value violates a documented invariant (dimensions, counts, ranges)."""


class ParseError(EvjectError):
    """A file could not be parsed; carries the offending line or byte offset."""

    def __init__(self, message, *, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class ShapeError(EvjectError):
    """Tensor shapes are incompatible for an operation."""


class StateError(EvjectError):
    """An object was used out of order (e.g. backward before forward)."""


class EncodingError(EvjectError):
    """A symbol cannot be represented by its model."""


class DecodeError(EvjectError):
    """Entropy-coded data is truncated or inconsistent with its models."""


class FormatError(EvjectError):
    """Container bytes do not follow the expected layout (magic, version, fields)."""


class LengthError(FormatError):
    """Container bytes end before a declared field or payload."""


class CorruptionError(FormatError):
    """Checksum mismatch."""


class UndefinedMetricError(EvjectError):
    """A metric is undefined for the given inputs (e.g. empty sets)."""
