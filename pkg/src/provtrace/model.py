"""Entity and event data model plus the line-delimited ingestion format.

Every record in the canonical stream is one JSON object per line::

    {"ts": 1000000000, "op": "recvfrom",
     "subj": {"kind": "socket", "sip": "10.0.0.2", "sport": 443,
              "dip": "192.168.2.3", "dport": 51820},
     "obj": {"kind": "process", "name": "apache2", "pid": 812},
     "bytes": 526}

Subject and object are already oriented along the data/control flow, so a
``read`` record has the file as ``subj`` and the reading process as ``obj``.
"""

from __future__ import annotations

import ipaddress
import json
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, NamedTuple

from .errors import EventFormatError, UnsupportedOperation

PROCESS_SEP = "#"
SOCKET_SEP = ">"
NS_PER_SEC = 1_000_000_000


class EntityKind(str, Enum):
    FILE = "file"
    PROCESS = "process"
    SOCKET = "socket"


class Op(str, Enum):
    RECVFROM = "recvfrom"
    SENDTO = "sendto"
    READ = "read"
    WRITE = "write"
    EXECVE = "execve"
    CLONE = "clone"


class EntityId(NamedTuple):
    """Canonical identity of a file, process or socket."""

    kind: EntityKind
    key: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.key}"

    @classmethod
    def parse(cls, text: str) -> EntityId:
        """Inverse of ``str()``: ``"process:bash#4821"`` -> EntityId."""
        kind, sep, key = text.partition(":")
        if not sep:
            raise EventFormatError(f"entity text {text!r} lacks a kind prefix")
        try:
            k = EntityKind(kind)
        except ValueError:
            raise EventFormatError(f"unknown entity kind {kind!r}", field="kind") from None
        return canonicalize(describe(cls(k, key)))


@dataclass(frozen=True, slots=True)
class Event:
    """One oriented system event; data or control flows ``us`` -> ``uo``."""

    us: EntityId
    uo: EntityId
    op: Op
    ti: int
    d: int
    eid: int

    def to_record(self) -> dict[str, Any]:
        return {
            "ts": self.ti,
            "op": self.op.value,
            "subj": describe(self.us),
            "obj": describe(self.uo),
            "bytes": self.d,
        }


@dataclass(frozen=True)
class TransferRule:
    ops: frozenset[Op]
    subject_kind: EntityKind
    object_kind: EntityKind
    description: str
    transfers: bool = field(default=True)

    @property
    def label(self) -> str:
        names = "/".join(sorted(o.value for o in self.ops))
        return f"{names}: {self.subject_kind.value} -> {self.object_kind.value}"


TRANSFER_RULES: tuple[TransferRule, ...] = (
    TransferRule(frozenset({Op.RECVFROM}), EntityKind.SOCKET, EntityKind.PROCESS,
                 "a process receives data from the network"),
    TransferRule(frozenset({Op.SENDTO}), EntityKind.PROCESS, EntityKind.SOCKET,
                 "a process sends data to the network"),
    TransferRule(frozenset({Op.READ}), EntityKind.FILE, EntityKind.PROCESS,
                 "a process reads a file"),
    TransferRule(frozenset({Op.WRITE}), EntityKind.PROCESS, EntityKind.FILE,
                 "a process writes a file"),
    TransferRule(frozenset({Op.EXECVE, Op.CLONE}), EntityKind.PROCESS, EntityKind.PROCESS,
                 "a process is started by another process"),
)

RULE_BY_OP: dict[Op, TransferRule] = {op: rule for rule in TRANSFER_RULES for op in rule.ops}

# raw syscall name -> (normalized op, actor is the subject)
_SYSCALLS: dict[str, tuple[Op, bool]] = {
    "recvfrom": (Op.RECVFROM, False),
    "sendto": (Op.SENDTO, True),
    "read": (Op.READ, False),
    "readv": (Op.READ, False),
    "write": (Op.WRITE, True),
    "writev": (Op.WRITE, True),
    "execve": (Op.EXECVE, True),
    "clone": (Op.CLONE, True),
}

_FIELDS = {
    EntityKind.FILE: ("path",),
    EntityKind.PROCESS: ("name", "pid"),
    EntityKind.SOCKET: ("sip", "sport", "dip", "dport"),
}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@lru_cache(maxsize=1 << 16)
def _canonical_ip(text: str) -> str:
    try:
        return str(ipaddress.ip_address(text))
    except ValueError:
        raise EventFormatError(f"invalid IP address {text!r}", field="ip") from None


@lru_cache(maxsize=1 << 16)
def _file_id(path: Any) -> EntityId:
    if not isinstance(path, str) or not path.startswith("/"):
        raise EventFormatError(f"file path must be absolute, got {path!r}", field="path")
    return EntityId(EntityKind.FILE, path)


@lru_cache(maxsize=1 << 16)
def _process_id(name: Any, pid: Any) -> EntityId:
    if not isinstance(name, str) or not name:
        raise EventFormatError(f"process name must be a non-empty string, got {name!r}", field="name")
    if not _is_int(pid) or pid < 0:
        raise EventFormatError(f"pid must be a non-negative integer, got {pid!r}", field="pid")
    return EntityId(EntityKind.PROCESS, f"{name}{PROCESS_SEP}{pid}")


@lru_cache(maxsize=1 << 16)
def _socket_id(sip: Any, sport: Any, dip: Any, dport: Any) -> EntityId:
    for name, port in (("sport", sport), ("dport", dport)):
        if not _is_int(port) or not 0 <= port <= 65535:
            raise EventFormatError(f"port out of range: {port!r}", field=name)
    addrs = []
    for name, ip in (("sip", sip), ("dip", dip)):
        if not isinstance(ip, str):
            raise EventFormatError(f"IP address must be a string, got {ip!r}", field=name)
        try:
            addrs.append(_canonical_ip(ip))
        except EventFormatError:
            raise EventFormatError(f"invalid IP address {ip!r}", field=name) from None
    src, dst = addrs
    return EntityId(EntityKind.SOCKET, f"{src}:{sport}{SOCKET_SEP}{dst}:{dport}")


def canonicalize(descriptor: Mapping[str, Any] | EntityId) -> EntityId:
    """Build the canonical EntityId for a raw descriptor.

    A descriptor is a mapping with ``kind`` plus the kind's fields
    (``path``; ``name`` and ``pid``; ``sip``, ``sport``, ``dip``, ``dport``).
    An EntityId passes through unchanged.
    """
    if isinstance(descriptor, EntityId):
        return descriptor
    if not isinstance(descriptor, Mapping):
        raise EventFormatError(f"entity descriptor must be an object, got {type(descriptor).__name__}")
    kind = descriptor.get("kind")
    try:
        if kind == "file":
            return _file_id(descriptor.get("path"))
        if kind == "process":
            return _process_id(descriptor.get("name"), descriptor.get("pid"))
        if kind == "socket":
            d = descriptor
            return _socket_id(d.get("sip"), d.get("sport"), d.get("dip"), d.get("dport"))
    except TypeError:
        # unhashable field values (lists, dicts) reach the lru_cache
        raise EventFormatError("entity fields must be scalars", field=str(kind)) from None
    raise EventFormatError(f"unknown entity kind {kind!r}", field="kind")


def describe(entity: EntityId) -> dict[str, Any]:
    """Split an EntityId back into its descriptor fields (inverse of canonicalize)."""
    kind, key = entity
    if kind is EntityKind.FILE:
        return {"kind": "file", "path": key}
    if kind is EntityKind.PROCESS:
        name, _, pid = key.rpartition(PROCESS_SEP)
        return {"kind": "process", "name": name, "pid": int(pid)}
    src, _, dst = key.partition(SOCKET_SEP)
    sip, _, sport = src.rpartition(":")
    dip, _, dport = dst.rpartition(":")
    return {"kind": "socket", "sip": sip, "sport": int(sport), "dip": dip, "dport": int(dport)}


def check_rule(op: Op, us: EntityId, uo: EntityId) -> TransferRule:
    rule = RULE_BY_OP[op]
    if us.kind is not rule.subject_kind or uo.kind is not rule.object_kind:
        raise EventFormatError(
            f"kind mismatch: {op.value} with {us.kind.value} -> {uo.kind.value} "
            f"violates transfer rule [{rule.label}]",
            field="op",
        )
    return rule


def orient(raw_op: str, actor: Mapping[str, Any] | EntityId,
           target: Mapping[str, Any] | EntityId) -> tuple[EntityId, EntityId, Op]:
    """Place subject and object along the direction data or control flows.

    ``actor`` is the process issuing the syscall. Raises UnsupportedOperation
    for syscalls outside the tracked set.
    """
    try:
        op, actor_first = _SYSCALLS[raw_op]
    except KeyError:
        raise UnsupportedOperation(raw_op) from None
    a, t = canonicalize(actor), canonicalize(target)
    if a.kind is not EntityKind.PROCESS:
        raise EventFormatError(f"syscall actor must be a process, got {a.kind.value}", field="actor")
    us, uo = (a, t) if actor_first else (t, a)
    check_rule(op, us, uo)
    return us, uo, op


def _byte_offset(line: str, pos: int) -> int:
    return len(line[:pos].encode("utf-8"))


def parse_event_line(line: str, eid: int) -> Event | None:
    """Parse one canonical record. Blank lines return None.

    Raises EventFormatError for syntax or semantic problems and
    UnsupportedOperation for syscalls the engine does not track.
    """
    if not line or line.isspace():
        return None
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EventFormatError(f"syntax error: {exc.msg}", offset=_byte_offset(line, exc.pos)) from None
    if not isinstance(rec, dict):
        raise EventFormatError("record must be a JSON object", offset=0)
    try:
        raw_op = rec["op"]
        ts = rec["ts"]
        subj = rec["subj"]
        obj = rec["obj"]
        nbytes = rec["bytes"]
    except KeyError as exc:
        raise EventFormatError("missing required field", field=exc.args[0]) from None
    try:
        op = _SYSCALLS[raw_op][0]
    except (KeyError, TypeError):
        raise UnsupportedOperation(str(raw_op)) from None
    if not _is_int(ts) or ts < 0:
        raise EventFormatError(f"ts must be a non-negative integer, got {ts!r}", field="ts")
    if not _is_int(nbytes) or nbytes < 0:
        raise EventFormatError(f"bytes must be a non-negative integer, got {nbytes!r}", field="bytes")
    us = canonicalize(subj)
    uo = canonicalize(obj)
    check_rule(op, us, uo)
    return Event(us, uo, op, ts, nbytes, eid)


def serialize_event(event: Event) -> str:
    """Canonical single-line text for an event (eid is positional, not stored)."""
    return json.dumps(event.to_record(), separators=(",", ":"))


def normalize_line(line: str) -> str:
    """Rewrite a valid record into canonical form without building an Event.

    Folds readv/writev, drops unknown keys, fixes key order and IP spelling.
    """
    rec = json.loads(line)
    out: dict[str, Any] = {"ts": rec["ts"], "op": _SYSCALLS[rec["op"]][0].value}
    for side in ("subj", "obj"):
        desc = rec[side]
        kind = EntityKind(desc["kind"])
        norm: dict[str, Any] = {"kind": kind.value}
        for name in _FIELDS[kind]:
            value = desc[name]
            if name in ("sip", "dip"):
                value = _canonical_ip(value)
            norm[name] = value
        out[side] = norm
    out["bytes"] = rec["bytes"]
    return json.dumps(out, separators=(",", ":"))


@dataclass
class ReadStats:
    consumed: int = 0
    blank: int = 0
    unsupported: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)


def read_events(lines: Iterable[str], start_eid: int = 1,
                stats: ReadStats | None = None, strict: bool = False) -> Iterator[Event]:
    """Parse a stream of canonical lines, assigning consecutive eids.

    Rejected lines are recorded in ``stats.errors`` as (line number, message)
    and consume no eid; with ``strict`` the first rejection is raised instead.
    """
    if stats is None:
        stats = ReadStats()
    eid = start_eid
    for lineno, line in enumerate(lines, 1):
        try:
            event = parse_event_line(line, eid)
        except UnsupportedOperation:
            stats.unsupported += 1
            continue
        except EventFormatError as exc:
            if strict:
                raise EventFormatError(f"line {lineno}: {exc}") from exc
            stats.errors.append((lineno, str(exc)))
            continue
        if event is None:
            stats.blank += 1
            continue
        stats.consumed += 1
        eid += 1
        yield event
