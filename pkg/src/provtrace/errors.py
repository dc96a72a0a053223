"""Exception hierarchy shared by every provtrace module."""

from __future__ import annotations


class ProvtraceError(Exception):
    """Base class for all errors raised by provtrace."""


class EventFormatError(ProvtraceError, ValueError):
    """A record or entity descriptor could not be turned into an Event."""

    def __init__(self, message: str, *, offset: int | None = None, field: str | None = None):
        self.offset = offset
        self.field = field
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class UnsupportedOperation(ProvtraceError):
    """The record names a syscall outside the tracked set; callers skip it."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"unsupported operation {op!r}")


class SequencingError(ProvtraceError):
    """An event arrived out of timestamp order beyond the configured slack."""


class NotSuspiciousError(ProvtraceError, KeyError):
    """The entity never received suspicious semantics, so it cannot be investigated."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "entity not suspicious"


class PoiUnreachableError(ProvtraceError):
    """The POI event is not part of its object's related-event set."""


class TierStorageError(ProvtraceError, OSError):
    """Writing or reading the cold RET tier failed."""


class SelectorError(ProvtraceError, LookupError):
    """A POI selector did not resolve to exactly one stored event."""
