"""Backtracking baseline, FP/FN metrics and parameter sweeps."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .engine import SemanticEngine
from .errors import ProvtraceError
from .graph import DEFAULT_WINDOW_NS, SemanticGraph
from .model import Event
from .paths import Investigation, ScoringParams, investigate, rescore

C_GRID = tuple(range(1, 10))
T_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


def backtrack(log: Sequence[Event], poi: Event) -> set[int]:
    """Backward causal closure from the POI, as eids.

    Seeds are the POI and every earlier event into the POI's object; an event
    ``a`` is then pulled in by an included event ``b`` when ``a.uo == b.us``
    and ``a.ti < b.ti``.
    """
    incoming: dict = defaultdict(list)
    for e in log:
        if e.eid <= poi.eid:
            incoming[e.uo].append(e)
    for lst in incoming.values():
        lst.sort(key=lambda e: (e.ti, e.eid))

    included: set[int] = set()
    threshold: dict = {}
    cursor: dict = defaultdict(int)
    work: list = []

    def include(e: Event) -> None:
        if e.eid in included:
            return
        included.add(e.eid)
        if e.ti > threshold.get(e.us, -1):
            threshold[e.us] = e.ti
            work.append(e.us)

    include(poi)
    for e in incoming.get(poi.uo, ()):
        if e.eid <= poi.eid:
            include(e)
    while work:
        node = work.pop()
        lst = incoming.get(node, ())
        limit = threshold[node]
        i = cursor[node]
        while i < len(lst) and lst[i].ti < limit:
            include(lst[i])
            i += 1
        cursor[node] = i
    return included


@dataclass(frozen=True)
class GroundTruth:
    scenario: str
    critical: frozenset[int]
    e_total: int
    poi: int | None = None

    def __post_init__(self):
        if not self.critical:
            raise ValueError("ground truth needs at least one critical event")

    def to_text(self) -> str:
        header = f"# scenario={self.scenario} e_total={self.e_total}"
        if self.poi is not None:
            header += f" poi={self.poi}"
        return "\n".join([header, *map(str, sorted(self.critical))]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> GroundTruth:
        meta: dict[str, str] = {}
        eids = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
                continue
            eids.append(int(line))
        return cls(
            scenario=meta.get("scenario", "unknown"),
            critical=frozenset(eids),
            e_total=int(meta.get("e_total", 0)),
            poi=int(meta["poi"]) if "poi" in meta else None,
        )

    @classmethod
    def load(cls, path: str | Path) -> GroundTruth:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass
class MetricsReport:
    fp: int
    fn: int
    fpr: Fraction
    fnr: Fraction
    identified: int
    critical: int
    e_total: int
    stages: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["fpr"] = float(self.fpr)
        d["fnr"] = float(self.fnr)
        d["fpr_exact"] = str(self.fpr)
        d["fnr_exact"] = str(self.fnr)
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1, sort_keys=True) + "\n"


def evaluate(ccg: SemanticGraph, gt: GroundTruth, *, known_eids: Iterable[int] | None = None,
             stages: dict[str, int] | None = None) -> MetricsReport:
    """Compare a CCG with the ground truth; a merged edge identifies all its eids."""
    if known_eids is not None:
        unknown = gt.critical.difference(known_eids)
        if unknown:
            raise ProvtraceError(f"ground truth references unknown eids: {sorted(unknown)[:10]}")
    identified = ccg.eid_set()
    fp = len(identified - gt.critical)
    fn = len(gt.critical - identified)
    fpr = Fraction(fp, gt.e_total) if gt.e_total else Fraction(0)
    return MetricsReport(
        fp=fp,
        fn=fn,
        fpr=fpr,
        fnr=Fraction(fn, len(gt.critical)),
        identified=len(identified),
        critical=len(gt.critical),
        e_total=gt.e_total,
        stages=dict(stages or {}),
    )


def mean_of_cases(reports: Sequence[MetricsReport]) -> dict[str, float]:
    """Per-metric averages over several cases (each case weighted equally)."""
    n = len(reports)
    if not n:
        return {}
    return {
        "fp": sum(r.fp for r in reports) / n,
        "fn": sum(r.fn for r in reports) / n,
        "fpr": float(sum(r.fpr for r in reports) / n),
        "fnr": float(sum(r.fnr for r in reports) / n),
    }


def run_log(log: Sequence[Event], poi: Event, *, params: ScoringParams | None = None,
            window_ns: int = DEFAULT_WINDOW_NS, whitelist: Iterable[str] = (),
            hot_cap: int = 4096) -> Investigation:
    """Ingest a log with a fresh engine and investigate one POI."""
    engine = SemanticEngine(hot_cap=hot_cap, whitelist=list(whitelist))
    try:
        engine.ingest(log)
        snapshot = engine.snapshot_related(poi.uo)
    finally:
        engine.close()
    return investigate(snapshot, poi, params, window_ns)


def stage_counts(inv: Investigation, backtrack_eids: set[int] | None = None) -> dict[str, int]:
    out = {
        "ssg": len(inv.ssg.edges),
        "compacted": len(inv.compacted.edges),
        "ccg": len(inv.ccg.edges),
        "ccg_eids": len(inv.ccg.eid_set()),
    }
    if backtrack_eids is not None:
        out["backtracking"] = len(backtrack_eids)
    return out


@dataclass
class GridCell:
    c: float
    t: float
    report: MetricsReport


class MonotonicityError(ProvtraceError, AssertionError):
    pass


def sweep(log: Sequence[Event], poi: Event, gt: GroundTruth,
          c_values: Sequence[float] = C_GRID, t_values: Sequence[float] = T_GRID, *,
          window_ns: int = DEFAULT_WINDOW_NS, whitelist: Iterable[str] = (),
          inv: Investigation | None = None) -> list[GridCell]:
    """Evaluate every (C, T) combination; the tree is built once and rescored."""
    if not c_values or not t_values:
        raise ValueError("sweep ranges must be non-empty")
    if inv is None:
        inv = run_log(log, poi, window_ns=window_ns, whitelist=whitelist)
    base = stage_counts(inv)
    cells = []
    for c in c_values:
        for t in t_values:
            ccg = rescore(inv, ScoringParams(c, t))
            stages = dict(base, ccg=len(ccg.edges), ccg_eids=len(ccg.eid_set()))
            cells.append(GridCell(c, t, evaluate(ccg, gt, stages=stages)))
    problems = monotonicity_violations(cells)
    if problems:
        raise MonotonicityError("; ".join(problems))
    return cells


def monotonicity_violations(cells: Sequence[GridCell]) -> list[str]:
    """Identified-edge counts must not grow with T (fixed C) nor with C (fixed T)."""
    by_c: dict[float, list[GridCell]] = defaultdict(list)
    by_t: dict[float, list[GridCell]] = defaultdict(list)
    for cell in cells:
        by_c[cell.c].append(cell)
        by_t[cell.t].append(cell)
    problems = []
    for c, row in by_c.items():
        row.sort(key=lambda x: x.t)
        for a, b in zip(row, row[1:]):
            if b.report.identified > a.report.identified:
                problems.append(f"C={c}: identified grows from T={a.t} to T={b.t}")
    for t, col in by_t.items():
        col.sort(key=lambda x: x.c)
        for a, b in zip(col, col[1:]):
            if b.report.identified > a.report.identified:
                problems.append(f"T={t}: identified grows from C={a.c} to C={b.c}")
    return problems


GRID_COLUMNS = ("c", "t", "fp", "fn", "fpr", "fnr", "identified", "critical", "e_total", "ccg_edges")


def grid_table(cells: Sequence[GridCell]) -> str:
    """Flat CSV with one row per grid cell."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for cell in cells:
        r = cell.report
        w.writerow([cell.c, cell.t, r.fp, r.fn, f"{float(r.fpr):.6g}", f"{float(r.fnr):.6g}",
                    r.identified, r.critical, r.e_total, r.stages.get("ccg", "")])
    return buf.getvalue()
