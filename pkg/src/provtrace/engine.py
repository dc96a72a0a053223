"""Streaming suspicious-semantic propagation over an event stream.

The engine keeps two structures:

* the suspicious entity list (SEL): every file or process that has received
  suspicious semantics, append-only;
* the related event table (RET): for every suspicious entity (and every
  socket that received data from one), the eids of the events that carried
  suspicion into it.

RET entries are immutable frozensets. An update builds a new set and swaps it
in, so readers always see a complete entry. Rarely modified entries are moved
to an append-only on-disk tier once the in-memory tier grows past ``hot_cap``.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import os
import shutil
import sys
import tempfile
import threading
from array import array
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NotSuspiciousError, SequencingError, TierStorageError
from .model import EntityId, EntityKind, Event, ReadStats, parse_event_line, read_events

log = logging.getLogger(__name__)

DEFAULT_HOT_CAP = 4096
_EMPTY: frozenset[int] = frozenset()


class SocketWhitelist:
    """Sockets whose traffic is trusted.

    Entries are either exact socket keys (``sip:sport>dip:dport``) or
    addresses / CIDR prefixes matched against the socket's remote
    (destination) address.
    """

    def __init__(self, entries: Iterable[str] = ()):
        self.entries: list[str] = []
        self._exact: set[str] = set()
        self._networks: list[ipaddress.IPv4Network | ipaddress.IPv6Network] = []
        self._cache: dict[str, bool] = {}
        for raw in entries:
            entry = raw.strip()
            if not entry or entry.startswith("#"):
                continue
            self.entries.append(entry)
            if ">" in entry:
                self._exact.add(EntityId.parse(f"socket:{entry}").key)
            else:
                self._networks.append(ipaddress.ip_network(entry, strict=False))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> SocketWhitelist:
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def matches(self, sock: EntityId) -> bool:
        if sock.key in self._exact:
            return True
        if not self._networks:
            return False
        dip = sock.key.rpartition(">")[2].rpartition(":")[0]
        hit = self._cache.get(dip)
        if hit is None:
            addr = ipaddress.ip_address(dip)
            hit = any(addr.version == net.version and addr in net for net in self._networks)
            if len(self._cache) >= 1 << 16:
                self._cache.clear()
            self._cache[dip] = hit
        return hit


class ColdStore:
    """Append-only on-disk RET tier.

    All eids live in one log of little-endian int64 values; the index maps
    entity text to the extents ``[offset, count]`` holding its eids. Appends
    only ever add eids that are not yet on disk. The index is persisted by
    ``flush``.
    """

    INDEX = "index.json"
    LOG = "eids.log"

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._index: dict[str, list[list[int]]] = {}
        self.dirty = False
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            idx = self.root / self.INDEX
            if idx.exists():
                self._index = json.loads(idx.read_text(encoding="utf-8"))
            self._fh = open(self.root / self.LOG, "a+b")
        except OSError as exc:
            raise TierStorageError(f"cannot open cold tier at {self.root}: {exc}") from exc
        self._fh.seek(0, os.SEEK_END)
        self._end = self._fh.tell()

    def __contains__(self, uid: EntityId) -> bool:
        return str(uid) in self._index

    def __len__(self) -> int:
        return len(self._index)

    def keys(self) -> list[EntityId]:
        return [EntityId.parse(k) for k in self._index]

    def count(self, uid: EntityId) -> int:
        return sum(n for _, n in self._index.get(str(uid), ()))

    def append(self, uid: EntityId, eids: Iterable[int]) -> None:
        buf = array("q", eids)
        self.dirty = True
        if not buf:
            self._index.setdefault(str(uid), [])
            return
        if sys.byteorder != "little":
            buf.byteswap()
        try:
            self._fh.seek(0, os.SEEK_END)
            buf.tofile(self._fh)
        except OSError as exc:
            raise TierStorageError(f"cold tier write failed for {uid}: {exc}") from exc
        self._index.setdefault(str(uid), []).append([self._end, len(buf)])
        self._end += len(buf) * buf.itemsize

    def read(self, uid: EntityId) -> tuple[int, ...]:
        """Eids in the order they were appended."""
        extents = self._index.get(str(uid))
        if not extents:
            return ()
        buf = array("q")
        try:
            self._fh.flush()
            for offset, n in extents:
                self._fh.seek(offset)
                buf.fromfile(self._fh, n)
        except (OSError, EOFError) as exc:
            raise TierStorageError(f"cold tier read failed for {uid}: {exc}") from exc
        if sys.byteorder != "little":
            buf.byteswap()
        return tuple(buf)

    def flush(self) -> None:
        tmp = self.root / (self.INDEX + ".tmp")
        try:
            self._fh.flush()
            tmp.write_text(json.dumps(self._index, sort_keys=True), encoding="utf-8")
            os.replace(tmp, self.root / self.INDEX)
        except OSError as exc:
            raise TierStorageError(f"cold tier index write failed: {exc}") from exc
        self.dirty = False

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


@dataclass(frozen=True)
class TransferOutcome:
    transferred: bool
    newly_suspicious: EntityId | None = None


_NO_TRANSFER = TransferOutcome(False)


@dataclass
class EvictionReport:
    evicted: list[EntityId] = field(default_factory=list)
    hot_before: int = 0
    hot_after: int = 0

    def __bool__(self) -> bool:
        return bool(self.evicted)


class SemanticEngine:
    """Single-writer engine applying the suspicious-semantic transfer rule."""

    def __init__(self, *, hot_cap: int = DEFAULT_HOT_CAP, ooo_slack_ns: int = 0,
                 whitelist: SocketWhitelist | Iterable[str] | None = None,
                 cold_dir: str | os.PathLike | None = None):
        if hot_cap < 1:
            raise ValueError("hot_cap must be at least 1")
        if ooo_slack_ns < 0:
            raise ValueError("ooo_slack_ns must be non-negative")
        self.hot_cap = hot_cap
        self.ooo_slack_ns = ooo_slack_ns
        if not isinstance(whitelist, SocketWhitelist):
            whitelist = SocketWhitelist(whitelist or ())
        self.whitelist = whitelist

        self.sel: dict[EntityId, int] = {}
        self.events: dict[int, Event] = {}
        self.tainted_sockets: set[EntityId] = set()
        self._hot: dict[EntityId, frozenset[int]] = {}
        self._mods: dict[EntityId, int] = {}
        self._cold_only: set[EntityId] = set()
        self._cold_dir = Path(cold_dir) if cold_dir is not None else None
        self._cold: ColdStore | None = None
        self._tmpdir: tempfile.TemporaryDirectory | None = None
        self._lock = threading.RLock()

        self.next_eid = 1
        self.last_ts: int | None = None
        self.n_events = 0
        self.n_transfers = 0
        self.n_evictions = 0

    # -- suspicion state ---------------------------------------------------

    def whitelist_check(self, sock: EntityId) -> bool:
        if sock.kind is not EntityKind.SOCKET:
            raise ValueError(f"whitelist_check expects a socket, got {sock.kind.value}")
        return self.whitelist.matches(sock)

    def is_suspicious(self, uid: EntityId) -> bool:
        if uid.kind is EntityKind.SOCKET:
            return uid in self.tainted_sockets or not self.whitelist.matches(uid)
        return uid in self.sel

    # -- ingestion ---------------------------------------------------------

    def process_event(self, e: Event) -> TransferOutcome:
        if e.eid < self.next_eid:
            raise SequencingError(f"eid {e.eid} already consumed (next is {self.next_eid})")
        if self.last_ts is not None and e.ti < self.last_ts - self.ooo_slack_ns:
            raise SequencingError(
                f"event {e.eid} at ts={e.ti} precedes stream time {self.last_ts} "
                f"by more than the allowed slack of {self.ooo_slack_ns} ns"
            )
        self.next_eid = e.eid + 1
        self.n_events += 1
        if self.last_ts is None or e.ti > self.last_ts:
            self.last_ts = e.ti

        us, uo = e.us, e.uo
        if us == uo:
            return _NO_TRANSFER
        if us.kind is EntityKind.SOCKET:
            if us not in self.tainted_sockets and self.whitelist.matches(us):
                return _NO_TRANSFER
        elif us not in self.sel:
            return _NO_TRANSFER

        newly = None
        with self._lock:
            src = self._read_entry(us)
            dst = self._promote(uo)
            self._hot[uo] = dst.union(src, (e.eid,))
            self._mods[uo] = self._mods.get(uo, 0) + 1
            self.events[e.eid] = e
            if uo.kind is EntityKind.SOCKET:
                if uo not in self.tainted_sockets and self.whitelist.matches(uo):
                    self.tainted_sockets.add(uo)
                    newly = uo
            elif uo not in self.sel:
                self.sel[uo] = len(self.sel)
                newly = uo
            self.n_transfers += 1
            if len(self._hot) > self.hot_cap:
                self.tier_maintenance()
        return TransferOutcome(True, newly)

    def ingest(self, events: Iterable[Event]) -> int:
        n = 0
        for e in events:
            self.process_event(e)
            n += 1
        return n

    def ingest_lines(self, lines: Iterable[str], stats: ReadStats | None = None,
                     strict: bool = False) -> ReadStats:
        """Parse and process canonical lines, numbering events from ``next_eid``."""
        stats = stats if stats is not None else ReadStats()
        for e in read_events(lines, self.next_eid, stats, strict=strict):
            self.process_event(e)
        return stats

    def parse_and_process(self, line: str) -> TransferOutcome | None:
        e = parse_event_line(line, self.next_eid)
        return None if e is None else self.process_event(e)

    # -- RET access --------------------------------------------------------

    def _cold_store(self) -> ColdStore:
        if self._cold is None:
            if self._cold_dir is None:
                self._tmpdir = tempfile.TemporaryDirectory(prefix="provtrace-cold-")
                self._cold_dir = Path(self._tmpdir.name)
            self._cold = ColdStore(self._cold_dir)
        return self._cold

    def _read_entry(self, uid: EntityId) -> frozenset[int]:
        entry = self._hot.get(uid)
        if entry is not None:
            return entry
        if uid in self._cold_only:
            return frozenset(self._cold_store().read(uid))
        return _EMPTY

    def _promote(self, uid: EntityId) -> frozenset[int]:
        entry = self._hot.get(uid)
        if entry is not None:
            return entry
        if uid in self._cold_only:
            entry = frozenset(self._cold_store().read(uid))
            self._cold_only.discard(uid)
            self._hot[uid] = entry
            self._mods[uid] = 0
            return entry
        return _EMPTY

    def has_entry(self, uid: EntityId) -> bool:
        return uid in self._hot or uid in self._cold_only

    def is_hot(self, uid: EntityId) -> bool:
        return uid in self._hot

    def related_eids(self, uid: EntityId) -> tuple[int, ...]:
        """RET[uid] ordered by (ti, eid)."""
        with self._lock:
            if not self.has_entry(uid):
                raise NotSuspiciousError(f"entity not suspicious: {uid}")
            entry = self._read_entry(uid)
        events = self.events
        return tuple(sorted(entry, key=lambda i: (events[i].ti, i)))

    def snapshot_related(self, uid: EntityId) -> list[Event]:
        """Point-in-time copy of RET[uid] materialized to events."""
        with self._lock:
            if not self.has_entry(uid):
                raise NotSuspiciousError(f"entity not suspicious: {uid}")
            entry = self._read_entry(uid)
            events = [self.events[i] for i in entry]
        events.sort(key=lambda ev: (ev.ti, ev.eid))
        return events

    def ret_keys(self) -> list[EntityId]:
        return list(self._hot) + list(self._cold_only)

    def ret_state(self) -> dict[EntityId, frozenset[int]]:
        """Every RET entry, reading the cold tier. Meant for tests and export."""
        with self._lock:
            return {uid: self._read_entry(uid) for uid in self.ret_keys()}

    # -- tiering -----------------------------------------------------------

    def tier_maintenance(self) -> EvictionReport:
        """Move the least-modified entries to disk once the hot tier exceeds its cap.

        Evicts down to half the cap so that the next few insertions do not
        trigger another cycle. Modification counters restart every cycle.
        """
        with self._lock:
            report = EvictionReport(hot_before=len(self._hot))
            if len(self._hot) > self.hot_cap:
                target = self.hot_cap // 2
                order = sorted(self._hot, key=lambda u: (self._mods.get(u, 0), str(u)))
                cold = self._cold_store()
                for uid in order[: len(self._hot) - target]:
                    entry = self._hot[uid]
                    if uid in cold:
                        entry = entry.difference(cold.read(uid))
                    cold.append(uid, sorted(entry))
                    del self._hot[uid]
                    self._mods.pop(uid, None)
                    self._cold_only.add(uid)
                    report.evicted.append(uid)
                self.n_evictions += len(report.evicted)
            for uid in self._mods:
                self._mods[uid] = 0
            report.hot_after = len(self._hot)
        if report.evicted:
            log.debug("evicted %d RET entries to cold tier", len(report.evicted))
        return report

    # -- introspection -----------------------------------------------------

    def state_size(self) -> dict[str, int]:
        return {
            "sel": len(self.sel),
            "hot": len(self._hot),
            "cold": len(self._cold_only),
            "event_store": len(self.events),
            "tainted_sockets": len(self.tainted_sockets),
            "hot_eids": sum(len(v) for v in self._hot.values()),
        }

    # -- persistence -------------------------------------------------------

    def checkpoint(self, path: str | os.PathLike) -> Path:
        """Write the whole engine state to a directory; ``restore`` reads it back."""
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        with self._lock:
            cold_root = root / "cold"
            if self._cold is not None:
                self._cold.flush()
                if self._cold.root.resolve() != cold_root.resolve():
                    shutil.copytree(self._cold.root, cold_root, dirs_exist_ok=True)
            elif cold_root.exists():
                shutil.rmtree(cold_root)
            _write_lines(root / "sel.txt", (str(u) for u in self.sel))
            _write_lines(root / "tainted_sockets.txt", sorted(str(u) for u in self.tainted_sockets))
            _write_lines(root / "hot.jsonl", (
                json.dumps({"entity": str(u), "eids": sorted(self._hot[u]), "mods": self._mods.get(u, 0)})
                for u in sorted(self._hot, key=str)
            ))
            _write_lines(root / "events.jsonl", (
                json.dumps({"eid": i, **self.events[i].to_record()}, separators=(",", ":"))
                for i in sorted(self.events)
            ))
            meta = {
                "version": 1,
                "next_eid": self.next_eid,
                "last_ts": self.last_ts,
                "hot_cap": self.hot_cap,
                "ooo_slack_ns": self.ooo_slack_ns,
                "whitelist": self.whitelist.entries,
                "n_events": self.n_events,
                "n_transfers": self.n_transfers,
                "n_evictions": self.n_evictions,
            }
            _write_lines(root / "meta.json", [json.dumps(meta, indent=2, sort_keys=True)])
        return root

    @classmethod
    def restore(cls, path: str | os.PathLike, **overrides) -> SemanticEngine:
        root = Path(path)
        meta_path = root / "meta.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"no engine checkpoint in {root}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        kwargs = {
            "hot_cap": meta["hot_cap"],
            "ooo_slack_ns": meta["ooo_slack_ns"],
            "whitelist": meta["whitelist"],
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        engine = cls(cold_dir=root / "cold", **kwargs)
        engine.next_eid = meta["next_eid"]
        engine.last_ts = meta["last_ts"]
        engine.n_events = meta["n_events"]
        engine.n_transfers = meta["n_transfers"]
        engine.n_evictions = meta.get("n_evictions", 0)
        for i, text in enumerate(_read_lines(root / "sel.txt")):
            engine.sel[EntityId.parse(text)] = i
        engine.tainted_sockets = {EntityId.parse(t) for t in _read_lines(root / "tainted_sockets.txt")}
        for line in _read_lines(root / "hot.jsonl"):
            rec = json.loads(line)
            uid = EntityId.parse(rec["entity"])
            engine._hot[uid] = frozenset(rec["eids"])
            engine._mods[uid] = rec["mods"]
        for line in _read_lines(root / "events.jsonl"):
            rec = json.loads(line)
            eid = rec.pop("eid")
            e = parse_event_line(json.dumps(rec), eid)
            engine.events[eid] = e
        if (root / "cold" / ColdStore.INDEX).exists():
            cold = engine._cold_store()
            engine._cold_only = {u for u in cold.keys() if u not in engine._hot}
        return engine

    def close(self) -> None:
        if self._cold is not None:
            if self._tmpdir is None and self._cold.dirty:
                self._cold.flush()
            self._cold.close()
            self._cold = None
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    os.replace(tmp, path)


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        return []
    return [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln]
