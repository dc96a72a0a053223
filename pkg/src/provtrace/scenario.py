"""Deterministic synthetic audit logs with labeled attack chains.

A scenario interleaves a benign workload (builds, edits, package fetches,
internal web traffic and downloads from the open internet) with one attack
chain modeled on common single-host intrusions. Every event of the chain
that carries suspicious semantics is labeled critical.
"""

from __future__ import annotations

import heapq
import json
import random
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .model import NS_PER_SEC, Event, read_events

HOST_IP = "10.0.0.2"
INTERNAL_NET = "10.0.0.0/8"
C2_IP = "192.168.2.3"
ATTACKER_IP = "203.0.113.66"
TEMPLATES = ("dataleak", "wget_executable", "illegal_storage")

MS = 1_000_000


@dataclass
class ScenarioSpec:
    template: str = "dataleak"
    seed: int = 1
    benign_events: int = 10_000
    benign_rate: float = 200.0          # events per second
    n_users: int = 3
    n_files: int = 400
    burst_chunks: int = 4               # syscalls per logical transfer
    browse_share: float = 0.05          # fraction of benign sessions downloading from outside
    decoys: int = 0                     # tainted-but-unrelated flows touching the chain
    collection_reads: int = 6           # sensitive files read by the collector
    attack_at: float = 0.6              # position of the chain within the benign timeline
    start_ts: int = 1_700_000_000 * NS_PER_SEC

    def validate(self) -> None:
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}; choose from {TEMPLATES}")
        if self.benign_events < 0 or self.decoys < 0 or self.collection_reads < 0:
            raise ValueError("counts must be non-negative")
        if self.benign_rate <= 0:
            raise ValueError("benign_rate must be positive")
        if self.burst_chunks < 1:
            raise ValueError("burst_chunks must be at least 1")
        if not 0.0 <= self.browse_share <= 1.0:
            raise ValueError("browse_share must lie in [0, 1]")
        if not 0.0 <= self.attack_at <= 1.0:
            raise ValueError("attack_at must lie in [0, 1]")
        if self.n_users < 1 or self.n_files < 1:
            raise ValueError("population sizes must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioSpec:
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        spec = cls(**data)
        spec.validate()
        return spec

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Scenario:
    spec: ScenarioSpec
    lines: list[str]
    critical: frozenset[int]
    poi_eid: int
    whitelist: list[str] = field(default_factory=lambda: [INTERNAL_NET])

    def events(self) -> list[Event]:
        return list(read_events(self.lines))

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        from .evaluation import GroundTruth, backtrack

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        events = self.events()
        poi = events[self.poi_eid - 1]
        gt = GroundTruth(self.spec.template, self.critical, len(backtrack(events, poi)), self.poi_eid)
        paths = {
            "log": out / "log.jsonl",
            "ground_truth": out / "ground_truth.txt",
            "whitelist": out / "whitelist.txt",
            "spec": out / "scenario.json",
        }
        paths["log"].write_text("".join(line + "\n" for line in self.lines), encoding="utf-8")
        paths["ground_truth"].write_text(gt.to_text(), encoding="utf-8")
        paths["whitelist"].write_text("\n".join(self.whitelist) + "\n", encoding="utf-8")
        paths["spec"].write_text(json.dumps(self.spec.to_dict(), indent=1, sort_keys=True) + "\n",
                                 encoding="utf-8")
        return paths


# -- record helpers ------------------------------------------------------------


def _file(path: str) -> dict:
    return {"kind": "file", "path": path}


def _proc(name: str, pid: int) -> dict:
    return {"kind": "process", "name": name, "pid": pid}


def _sock(sport: int, dip: str, dport: int) -> dict:
    return {"kind": "socket", "sip": HOST_IP, "sport": sport, "dip": dip, "dport": dport}


def _rec(ts: int, op: str, subj: dict, obj: dict, nbytes: int) -> dict:
    return {"ts": ts, "op": op, "subj": subj, "obj": obj, "bytes": nbytes}


def _dump(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


class _Timeline:
    """Emits records at strictly increasing timestamps."""

    def __init__(self, start: int):
        self.records: list[tuple[int, dict, bool]] = []
        self.t = start

    def at(self, t: int) -> _Timeline:
        self.t = t
        return self

    def emit(self, op: str, subj: dict, obj: dict, nbytes: int, *, gap: int = MS,
             critical: bool = False) -> None:
        self.t += gap
        self.records.append((self.t, _rec(self.t, op, subj, obj, nbytes), critical))

    def transfer(self, src_op: str, src: dict, mid: dict, dst_op: str, dst: dict, total: int,
                 chunks: int, *, gap: int = MS, critical: bool = True) -> None:
        """Relay ``total`` bytes src -> mid -> dst in interleaved chunks (read then write)."""
        sizes = _split(total, chunks)
        for n in sizes:
            self.emit(src_op, src, mid, n, gap=gap, critical=critical)
            self.emit(dst_op, mid, dst, n, gap=gap // 2 or 1, critical=critical)


def _split(total: int, chunks: int) -> list[int]:
    base, rem = divmod(total, chunks)
    return [base + (1 if i < rem else 0) for i in range(chunks)]


# -- benign workload -----------------------------------------------------------


class BenignWorkload:
    """Endless benign activity drawn from a small menu of motifs.

    Peers live in the internal (whitelisted) network except for the browse
    motif, which downloads from outside and so taints the downloader, the
    downloaded file and any viewer opening it.
    """

    MOTIFS = ("edit", "build", "fetch", "web", "web", "web", "shell")

    def __init__(self, spec: ScenarioSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.next_pid = 20_000
        self.users = [f"user{i}" for i in range(spec.n_users)]
        self.shells = [_proc("bash", 1000 + i) for i in range(spec.n_users)]
        self.files = [f"/home/{self.users[i % spec.n_users]}/work/doc{i}.txt" for i in range(spec.n_files)]
        self.workers = [_proc("apache2", 812 + i) for i in range(4)]
        self.pages = [f"/var/www/html/page{i}.html" for i in range(max(4, spec.n_files // 10))]
        self.mirrors = [f"10.1.0.{i}" for i in range(1, 4)]
        self.clients = [f"10.0.1.{i}" for i in range(1, 60)]

    def _pid(self) -> int:
        self.next_pid += 1
        return self.next_pid

    def _port(self) -> int:
        return self.rng.randrange(32768, 61000)

    def session(self, t: int) -> list[dict]:
        """One motif instance starting at ``t``; timestamps strictly increase."""
        rng = self.rng
        if rng.random() < self.spec.browse_share:
            motif = "browse"
        else:
            motif = rng.choice(self.MOTIFS)
        recs: list[dict] = []

        def add(op, subj, obj, nbytes):
            nonlocal t
            t += rng.randrange(100_000, 3 * MS)
            recs.append(_rec(t, op, subj, obj, nbytes))

        if motif == "edit":
            sh = rng.choice(self.shells)
            pid = self._pid()
            vim = _proc("vim", pid)
            add("clone", sh, _proc("bash", pid), 0)
            add("execve", _proc("bash", pid), vim, 0)
            f = _file(rng.choice(self.files))
            add("read", f, vim, rng.randrange(200, 20_000))
            add("write", vim, f, rng.randrange(200, 20_000))
        elif motif == "build":
            sh = rng.choice(self.shells)
            make = _proc("make", self._pid())
            add("clone", sh, make, 0)
            objs = []
            for _ in range(rng.randrange(1, 4)):
                cc = _proc("cc", self._pid())
                add("clone", make, cc, 0)
                src = _file(rng.choice(self.files).replace(".txt", ".c"))
                add("read", src, cc, rng.randrange(500, 50_000))
                obj = _file(src["path"].replace(".c", ".o"))
                add("write", cc, obj, rng.randrange(1000, 80_000))
                objs.append(obj)
            ld = _proc("ld", self._pid())
            add("clone", make, ld, 0)
            for obj in objs:
                add("read", obj, ld, rng.randrange(1000, 80_000))
            add("write", ld, _file(f"/home/{rng.choice(self.users)}/work/a.out"), rng.randrange(10_000, 200_000))
        elif motif == "fetch":
            apt = _proc("apt", self._pid())
            add("clone", self.shells[0], apt, 0)
            sock = _sock(self._port(), rng.choice(self.mirrors), 80)
            add("sendto", apt, sock, rng.randrange(100, 400))
            pkg = _file(f"/var/cache/apt/archives/pkg{rng.randrange(10_000)}.deb")
            for _ in range(rng.randrange(1, 4)):
                add("recvfrom", sock, apt, rng.randrange(1000, 65_536))
                add("write", apt, pkg, rng.randrange(1000, 65_536))
        elif motif == "browse":
            sh = rng.choice(self.shells)
            curl = _proc("curl", self._pid())
            add("clone", sh, curl, 0)
            sock = _sock(self._port(), f"93.184.{rng.randrange(256)}.{rng.randrange(1, 255)}", 443)
            add("sendto", curl, sock, rng.randrange(200, 800))
            dl = _file(f"/home/{rng.choice(self.users)}/Downloads/dl{curl['pid']}.bin")
            for _ in range(rng.randrange(1, 4)):
                add("recvfrom", sock, curl, rng.randrange(4000, 65_536))
                add("write", curl, dl, rng.randrange(4000, 65_536))
            if rng.random() < 0.5:
                viewer = _proc("evince", self._pid())
                add("clone", sh, viewer, 0)
                add("read", dl, viewer, rng.randrange(4000, 65_536))
        elif motif == "web":
            worker = rng.choice(self.workers)
            sock = _sock(80, rng.choice(self.clients), self._port())
            add("recvfrom", sock, worker, rng.randrange(200, 900))
            add("read", _file(rng.choice(self.pages)), worker, rng.randrange(1000, 30_000))
            add("sendto", worker, sock, rng.randrange(1000, 30_000))
            add("write", worker, _file("/var/log/apache2/access.log"), rng.randrange(80, 200))
        else:
            sh = rng.choice(self.shells)
            pid = self._pid()
            tool = rng.choice(("ls", "cat", "grep", "less"))
            add("clone", sh, _proc("bash", pid), 0)
            add("execve", _proc("bash", pid), _proc(tool, pid), 0)
            add("read", _file(rng.choice(self.files)), _proc(tool, pid), rng.randrange(100, 10_000))
        return recs

    def stream(self, start: int, n_events: int) -> Iterator[dict]:
        mean_gap = NS_PER_SEC / self.spec.benign_rate
        t = start
        emitted = 0
        while emitted < n_events:
            for rec in self.session(t):
                if emitted >= n_events:
                    break
                yield rec
                emitted += 1
                t = rec["ts"]
            # exponential think time keeps the average rate
            t += 1 + int(self.rng.expovariate(1.0) * mean_gap * 4)


def benign_lines(spec: ScenarioSpec, n_events: int | None = None) -> Iterator[str]:
    """Benign-only canonical stream, generated lazily."""
    rng = random.Random(spec.seed)
    work = BenignWorkload(spec, rng)
    n = spec.benign_events if n_events is None else n_events
    for rec in work.stream(spec.start_ts, n):
        yield _dump(rec)


# -- attack chains -------------------------------------------------------------


def _decoy_downloads(tl: _Timeline, rng: random.Random, spec: ScenarioSpec, t_begin: int,
                     t_end: int, user: str) -> list[dict]:
    """Browser downloads from outside the whitelist, spread over the benign period.

    Each download taints the browser and the file it writes; the returned
    files are later swept up by the attacker's collection step.
    """
    files = []
    browser = _proc("firefox", 3100)
    span = max(t_end - t_begin, spec.decoys + 1)
    for k in range(spec.decoys):
        t = t_begin + span * (k + 1) // (spec.decoys + 1)
        tl.at(t)
        cdn = _sock(40_000 + k, f"151.101.{rng.randrange(1, 250)}.{rng.randrange(1, 250)}", 443)
        tl.emit("sendto", browser, cdn, rng.randrange(300, 900), critical=False)
        doc = _file(f"/home/{user}/Downloads/file{k}.pdf")
        tl.transfer("recvfrom", cdn, browser, "write", doc, rng.randrange(20_000, 400_000),
                    rng.randrange(1, 4), gap=2 * MS, critical=False)
        files.append(doc)
    return files


def _attack(spec: ScenarioSpec, rng: random.Random, t0: int, t_first: int) -> tuple[list, int]:
    """Return (timeline records, index of the POI record) for the template."""
    tl = _Timeline(t0)
    chunks = spec.burst_chunks
    user = "user0"
    decoy_files = _decoy_downloads(tl, rng, spec, t_first, t0 - 30 * NS_PER_SEC, user) if spec.decoys else []
    sensitive = [f"/home/{user}/.ssh/id_rsa", "/etc/passwd", "/etc/shadow",
                 f"/home/{user}/Documents/budget.xlsx", f"/home/{user}/Documents/notes.txt",
                 f"/home/{user}/.bash_history"]

    tl.at(t0)
    if spec.template == "dataleak":
        apache = _proc("apache2", 812)
        exploit = _sock(80, ATTACKER_IP, 41_234)
        tl.emit("recvfrom", exploit, apache, 526, critical=True)
        sh = _proc("sh", 4001)
        tl.emit("clone", apache, sh, 0, gap=40 * MS, critical=True)
        tl.emit("clone", sh, _proc("sh", 4002), 0, gap=30 * MS, critical=True)
        wget = _proc("wget", 4002)
        tl.emit("execve", _proc("sh", 4002), wget, 0, gap=5 * MS, critical=True)
        dl = _sock(51_820, C2_IP, 8080)
        tl.emit("sendto", wget, dl, 180, gap=20 * MS, critical=True)
        script = _file("/tmp/gather.sh")
        tl.transfer("recvfrom", dl, wget, "write", script, 8192, chunks, gap=3 * MS)

        tl.emit("clone", sh, _proc("sh", 4003), 0, gap=400 * MS, critical=True)
        bash = _proc("bash", 4003)
        tl.emit("execve", _proc("sh", 4003), bash, 0, gap=5 * MS, critical=True)
        for n in _split(8192, max(1, chunks // 2)):
            tl.emit("read", script, bash, n, gap=2 * MS, critical=True)
        collected = 0
        for path in sensitive[: spec.collection_reads]:
            n = rng.randrange(800, 6000)
            collected += n
            tl.emit("read", _file(path), bash, n, gap=15 * MS)
        for doc in decoy_files:
            n = rng.randrange(20_000, 60_000)
            tl.emit("read", doc, bash, n, gap=15 * MS)
        stage = _file("/tmp/leaked.vm2")
        for n in _split(max(collected, 4096) * 2, chunks):
            tl.emit("write", bash, stage, n, gap=3 * MS, critical=True)

        tl.emit("clone", bash, _proc("bash", 4004), 0, gap=900 * MS, critical=True)
        gpg = _proc("gpg", 4004)
        tl.emit("execve", _proc("bash", 4004), gpg, 0, gap=5 * MS, critical=True)
        packed = _file("/tmp/leaked")
        tl.transfer("read", stage, gpg, "write", packed, max(collected, 4096) * 2, chunks, gap=4 * MS)

        tl.emit("clone", bash, _proc("bash", 4005), 0, gap=1200 * MS, critical=True)
        ssh = _proc("ssh", 4005)
        tl.emit("execve", _proc("bash", 4005), ssh, 0, gap=5 * MS, critical=True)
        c2 = _sock(50_022, C2_IP, 22)
        tl.transfer("read", packed, ssh, "sendto", c2, max(collected, 4096) * 2, chunks, gap=6 * MS)
    elif spec.template == "wget_executable":
        apache = _proc("apache2", 812)
        exploit = _sock(80, ATTACKER_IP, 41_234)
        tl.emit("recvfrom", exploit, apache, 412, critical=True)
        sh = _proc("sh", 4001)
        tl.emit("clone", apache, sh, 0, gap=40 * MS, critical=True)
        tl.emit("clone", sh, _proc("sh", 4002), 0, gap=30 * MS, critical=True)
        wget = _proc("wget", 4002)
        tl.emit("execve", _proc("sh", 4002), wget, 0, gap=5 * MS, critical=True)
        dl = _sock(51_820, C2_IP, 8000)
        tl.emit("sendto", wget, dl, 160, gap=20 * MS, critical=True)
        payload = _file("/tmp/payload.py")
        tl.transfer("recvfrom", dl, wget, "write", payload, 6144, chunks, gap=3 * MS)
        tl.emit("clone", sh, _proc("sh", 4003), 0, gap=300 * MS, critical=True)
        py = _proc("python3", 4003)
        tl.emit("execve", _proc("sh", 4003), py, 0, gap=5 * MS, critical=True)
        for n in _split(6144, max(1, chunks // 2)):
            tl.emit("read", payload, py, n, gap=2 * MS, critical=True)
        for doc in decoy_files:
            tl.emit("read", doc, py, rng.randrange(20_000, 60_000), gap=15 * MS)
        c2 = _sock(50_100, C2_IP, 4444)
        for n in _split(2048, chunks):
            tl.emit("sendto", py, c2, n, gap=5 * MS, critical=True)
    else:  # illegal_storage
        ssh_in = _sock(22, ATTACKER_IP, 50_001)
        sshd = _proc("sshd", 700)
        tl.emit("recvfrom", ssh_in, sshd, 980, critical=True)
        tl.emit("clone", sshd, _proc("sshd", 4101), 0, gap=20 * MS, critical=True)
        tl.emit("execve", _proc("sshd", 4101), _proc("bash", 4101), 0, gap=5 * MS, critical=True)
        tl.emit("clone", _proc("bash", 4101), _proc("bash", 4102), 0, gap=900 * MS, critical=True)
        wget = _proc("wget", 4102)
        tl.emit("execve", _proc("bash", 4102), wget, 0, gap=5 * MS, critical=True)
        dl = _sock(51_900, C2_IP, 80)
        tl.emit("sendto", wget, dl, 170, gap=20 * MS, critical=True)
        stash = _file("/home/user1/.cache/.stash.tgz")
        tl.transfer("recvfrom", dl, wget, "write", stash, 250_000, chunks, gap=3 * MS)
        for doc in decoy_files:
            tl.emit("read", doc, _proc("bash", 4101), rng.randrange(20_000, 60_000), gap=15 * MS)
        tl.emit("clone", _proc("bash", 4101), _proc("bash", 4103), 0, gap=700 * MS, critical=True)
        tar = _proc("tar", 4103)
        tl.emit("execve", _proc("bash", 4103), tar, 0, gap=5 * MS, critical=True)
        tl.transfer("read", stash, tar, "write", _file("/home/user1/.cache/.x/run.sh"), 250_000, chunks,
                    gap=4 * MS)
    recs = tl.records
    poi_idx = max(i for i, r in enumerate(recs) if r[2])
    return recs, poi_idx


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Build the log, the critical eid set and the POI eid for a spec."""
    spec.validate()
    rng = random.Random(spec.seed)
    attack_rng = random.Random(spec.seed * 7919 + 17)
    duration = int(spec.benign_events / spec.benign_rate * NS_PER_SEC)
    t0 = spec.start_ts + int(duration * spec.attack_at) + NS_PER_SEC
    attack, poi_idx = _attack(spec, attack_rng, t0, spec.start_ts + NS_PER_SEC)

    work = BenignWorkload(spec, rng)
    benign = ((r["ts"], 1, i, r, False, False)
              for i, r in enumerate(work.stream(spec.start_ts, spec.benign_events)))
    chain = [(ts, 0, i, r, crit, i == poi_idx) for i, (ts, r, crit) in enumerate(attack)]
    chain.sort(key=lambda x: (x[0], x[2]))

    lines: list[str] = []
    critical: set[int] = set()
    poi_eid = -1
    last_ts = -1
    for ts, _, _, rec, crit, is_poi in heapq.merge(chain, benign, key=lambda x: (x[0], x[1], x[2])):
        if ts <= last_ts:
            ts = last_ts + 1
        last_ts = ts
        lines.append(_dump(dict(rec, ts=ts)))
        eid = len(lines)
        if crit:
            critical.add(eid)
        if is_poi:
            poi_eid = eid
    return Scenario(spec, lines, frozenset(critical), poi_eid)
