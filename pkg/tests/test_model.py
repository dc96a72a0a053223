import ipaddress
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from provtrace.errors import EventFormatError, UnsupportedOperation
from provtrace.model import (
    TRANSFER_RULES,
    EntityId,
    EntityKind,
    Op,
    ReadStats,
    canonicalize,
    describe,
    normalize_line,
    orient,
    parse_event_line,
    read_events,
    serialize_event,
)

P = {"kind": "process", "name": "bash", "pid": 4821}
F = {"kind": "file", "path": "/etc/passwd"}
S = {"kind": "socket", "sip": "10.0.0.2", "sport": 443, "dip": "192.168.2.3", "dport": 51820}


def test_canonical_keys():
    assert canonicalize(F) == EntityId(EntityKind.FILE, "/etc/passwd")
    assert canonicalize(P) == EntityId(EntityKind.PROCESS, "bash#4821")
    assert canonicalize(S) == EntityId(EntityKind.SOCKET, "10.0.0.2:443>192.168.2.3:51820")
    assert str(canonicalize(P)) == "process:bash#4821"


def test_canonicalize_idempotent():
    for d in (F, P, S):
        uid = canonicalize(d)
        assert canonicalize(uid) is uid
        assert canonicalize(describe(uid)) == uid
        assert EntityId.parse(str(uid)) == uid


def test_ip_spelling_is_canonical():
    a = canonicalize(dict(S, dip="fe80:0:0:0:0:0:0:1"))
    b = canonicalize(dict(S, dip="fe80::1"))
    assert a == b
    assert EntityId.parse(str(a)) == a


@pytest.mark.parametrize("desc,field", [
    ({"kind": "file", "path": "etc/passwd"}, "path"),
    ({"kind": "process", "name": "bash", "pid": -1}, "pid"),
    ({"kind": "process", "name": "bash", "pid": True}, "pid"),
    ({"kind": "process", "name": "", "pid": 1}, "name"),
    (dict(S, sport=70000), "sport"),
    (dict(S, dport=-1), "dport"),
    (dict(S, sip="10.0.0.300"), "sip"),
    (dict(S, dip="nowhere"), "dip"),
    ({"kind": "pipe"}, "kind"),
])
def test_malformed_descriptor_names_field(desc, field):
    with pytest.raises(EventFormatError) as info:
        canonicalize(desc)
    assert info.value.field == field
    assert field in str(info.value)


names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)
ports = st.integers(0, 65535)
ips = st.one_of(st.ip_addresses(v=4), st.ip_addresses(v=6)).map(str)
descriptors = st.one_of(
    st.builds(lambda p: {"kind": "file", "path": "/" + p}, st.text(max_size=20)),
    st.builds(lambda n, p: {"kind": "process", "name": n, "pid": p}, names, st.integers(0, 2**22)),
    st.builds(lambda a, b, c, d: {"kind": "socket", "sip": a, "sport": b, "dip": c, "dport": d},
              ips, ports, ips, ports),
)


@given(descriptors, descriptors)
def test_canonicalize_injective(a, b):
    def fields(d):
        out = dict(d)
        for k in ("sip", "dip"):
            if k in out:
                out[k] = ipaddress.ip_address(out[k])
        return out

    assert (canonicalize(a) == canonicalize(b)) == (fields(a) == fields(b))


@given(descriptors)
def test_text_round_trip(d):
    uid = canonicalize(d)
    assert EntityId.parse(str(uid)) == uid


def test_orient_flow_direction():
    pid, fid = canonicalize(P), canonicalize(F)
    assert orient("read", P, F) == (fid, pid, Op.READ)
    assert orient("readv", P, F) == (fid, pid, Op.READ)
    assert orient("write", P, F) == (pid, fid, Op.WRITE)
    assert orient("writev", P, F) == (pid, fid, Op.WRITE)
    child = {"kind": "process", "name": "sh", "pid": 9}
    assert orient("clone", P, child) == (pid, canonicalize(child), Op.CLONE)
    assert orient("recvfrom", P, S) == (canonicalize(S), pid, Op.RECVFROM)
    assert orient("sendto", P, S) == (pid, canonicalize(S), Op.SENDTO)


def test_orient_rejects():
    with pytest.raises(UnsupportedOperation):
        orient("mmap", P, F)
    with pytest.raises(EventFormatError, match="kind mismatch"):
        orient("read", P, S)


def test_rules_cover_exactly_five_rows():
    assert len(TRANSFER_RULES) == 5
    covered = {(op, r.subject_kind, r.object_kind) for r in TRANSFER_RULES for op in r.ops}
    assert len(covered) == 6
    assert all(r.transfers for r in TRANSFER_RULES)


def line(op="recvfrom", subj=S, obj=P, ts=1_000_000_000, nbytes=526):
    return json.dumps({"ts": ts, "op": op, "subj": subj, "obj": obj, "bytes": nbytes})


def test_parse_copies_fields():
    e = parse_event_line(line(), 7)
    assert (e.op, e.d, e.ti, e.eid) == (Op.RECVFROM, 526, 1_000_000_000, 7)
    assert e.us == canonicalize(S) and e.uo == canonicalize(P)


def test_parse_kind_mismatch_cites_rule():
    with pytest.raises(EventFormatError) as info:
        parse_event_line(line(op="read", subj=S, obj=P), 1)
    assert "kind mismatch" in str(info.value)
    assert "file -> process" in str(info.value)


def test_parse_blank_and_syntax():
    assert parse_event_line("", 1) is None
    assert parse_event_line("   \n", 1) is None
    with pytest.raises(EventFormatError) as info:
        parse_event_line('{"ts": 1, "op": }', 1)
    assert info.value.offset == 16
    with pytest.raises(EventFormatError, match="missing"):
        parse_event_line('{"ts": 1}', 1)
    with pytest.raises(EventFormatError, match="bytes"):
        parse_event_line(line(nbytes=-3), 1)
    with pytest.raises(EventFormatError, match="ts"):
        parse_event_line(line(ts=1.5), 1)


def test_byte_offset_counts_utf8():
    bad = '{"subj": "é", "x": ]'
    with pytest.raises(EventFormatError) as info:
        parse_event_line(bad, 1)
    assert info.value.offset == len(bad.encode()) - 1


def test_read_events_sequencing_and_stats():
    lines = [line(ts=1), "", line(op="mmap"), "not json", line(ts=2), line(op="writev", subj=P, obj=F, ts=3)]
    stats = ReadStats()
    events = list(read_events(lines, start_eid=10, stats=stats))
    assert [e.eid for e in events] == [10, 11, 12]
    assert events[2].op is Op.WRITE
    assert (stats.consumed, stats.blank, stats.unsupported) == (3, 1, 1)
    assert stats.errors[0][0] == 4
    with pytest.raises(EventFormatError, match="line 4"):
        list(read_events(lines, strict=True))


files = st.builds(lambda p: {"kind": "file", "path": "/" + p}, st.text(max_size=20))
procs = st.builds(lambda n, p: {"kind": "process", "name": n, "pid": p}, names, st.integers(0, 2**22))
socks = st.builds(lambda a, b, c, d: {"kind": "socket", "sip": a, "sport": b, "dip": c, "dport": d},
                  ips, ports, ips, ports)
KINDS = {"recvfrom": (socks, procs), "sendto": (procs, socks), "read": (files, procs),
         "readv": (files, procs), "write": (procs, files), "writev": (procs, files),
         "execve": (procs, procs), "clone": (procs, procs)}
records = st.sampled_from(sorted(KINDS)).flatmap(
    lambda op: st.tuples(st.integers(0, 2**62), st.just(op), st.tuples(*KINDS[op]), st.integers(0, 2**40)))


@given(records)
def test_serialize_matches_normalize(rec):
    ts, op, (a, b), n = rec
    raw = json.dumps({"bytes": n, "obj": b, "op": op, "subj": a, "ts": ts, "extra": 1})
    e = parse_event_line(raw, 1)
    assert serialize_event(e) == normalize_line(raw)
    assert parse_event_line(serialize_event(e), 1) == e
