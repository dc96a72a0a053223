"""Suspicious semantic graph construction, edge compaction and graph export."""

from __future__ import annotations

import json
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .errors import PoiUnreachableError
from .model import NS_PER_SEC, EntityId, Event, Op, describe

DEFAULT_WINDOW_NS = 10 * NS_PER_SEC


@dataclass(frozen=True)
class GraphEdge:
    us: EntityId
    uo: EntityId
    op: Op
    ti: int
    d: int
    eids: tuple[int, ...]

    @classmethod
    def from_event(cls, e: Event) -> GraphEdge:
        return cls(e.us, e.uo, e.op, e.ti, e.d, (e.eid,))

    @property
    def eid(self) -> int:
        """Smallest constituent eid; the edge's stable handle."""
        return self.eids[0]

    def sort_key(self) -> tuple[int, int]:
        return (self.ti, self.eids[0])


@dataclass(frozen=True)
class SemanticGraph:
    nodes: tuple[EntityId, ...]
    edges: tuple[GraphEdge, ...]
    poi: GraphEdge
    flags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.poi not in self.edges:
            raise ValueError("POI edge must be one of the graph's edges")

    @classmethod
    def from_edges(cls, edges: Iterable[GraphEdge], poi: GraphEdge,
                   flags: Iterable[str] = ()) -> SemanticGraph:
        ordered = tuple(sorted(edges, key=GraphEdge.sort_key))
        nodes = {u for e in ordered for u in (e.us, e.uo)}
        return cls(tuple(sorted(nodes, key=str)), ordered, poi, frozenset(flags))

    def eid_set(self) -> set[int]:
        return {i for e in self.edges for i in e.eids}

    def in_edges(self) -> dict[EntityId, list[GraphEdge]]:
        idx: dict[EntityId, list[GraphEdge]] = defaultdict(list)
        for e in self.edges:
            idx[e.uo].append(e)
        return idx

    def __len__(self) -> int:
        return len(self.edges)


def build_ssg(snapshot: Sequence[Event], poi: Event) -> SemanticGraph:
    """One node per entity and one edge per event of the POI object's RET snapshot."""
    edges = [GraphEdge.from_event(e) for e in snapshot]
    poi_edge = next((g for g in edges if g.eids[0] == poi.eid), None)
    if poi_edge is None:
        raise PoiUnreachableError(
            f"POI not semantically reachable: event {poi.eid} is not among the "
            f"related events of {poi.uo}"
        )
    return SemanticGraph.from_edges(edges, poi_edge)


def compact_edges(g: SemanticGraph, window_ns: int = DEFAULT_WINDOW_NS) -> SemanticGraph:
    """Merge same (subject, object, op) edges whose consecutive gap is below the window.

    Gaps are measured to the previous constituent, so a steady burst chains
    into one edge. A merged edge takes the earliest timestamp and the summed
    data amount.
    """
    if window_ns < 0:
        raise ValueError("window must be non-negative")
    groups: dict[tuple, list[GraphEdge]] = defaultdict(list)
    for e in g.edges:
        groups[(e.us, e.uo, e.op)].append(e)

    merged: list[GraphEdge] = []
    new_poi = None
    for (us, uo, op), members in groups.items():
        members.sort(key=GraphEdge.sort_key)
        run = [members[0]]
        last_ti = members[0].ti
        for e in members[1:]:
            if e.ti - last_ti < window_ns:
                run.append(e)
            else:
                merged.append(_merge(run))
                run = [e]
            last_ti = e.ti
        merged.append(_merge(run))

    poi_eid = g.poi.eids[0]
    for e in merged:
        if poi_eid in e.eids:
            new_poi = e
            break
    return SemanticGraph.from_edges(merged, new_poi, g.flags)


def _merge(run: list[GraphEdge]) -> GraphEdge:
    if len(run) == 1:
        return run[0]
    first = run[0]
    eids = tuple(sorted(i for e in run for i in e.eids))
    return GraphEdge(first.us, first.uo, first.op, first.ti, sum(e.d for e in run), eids)


# -- export ------------------------------------------------------------------


def edge_record(e: GraphEdge, poi: GraphEdge | None = None) -> dict[str, Any]:
    return {
        "us": str(e.us),
        "uo": str(e.uo),
        "op": e.op.value,
        "ti": e.ti,
        "d": e.d,
        "eids": list(e.eids),
        "poi": e is poi or e == poi,
    }


def graph_to_dict(g: SemanticGraph,
                  annotations: Mapping[GraphEdge, Mapping[str, Any]] | None = None) -> dict[str, Any]:
    edges = []
    for e in g.edges:
        rec = edge_record(e, g.poi)
        if annotations and e in annotations:
            rec.update(annotations[e])
        edges.append(rec)
    return {
        "nodes": [{"id": str(u), **describe(u)} for u in g.nodes],
        "edges": edges,
        "poi": g.poi.eids[0],
        "flags": sorted(g.flags),
    }


def graph_to_json(g: SemanticGraph,
                  annotations: Mapping[GraphEdge, Mapping[str, Any]] | None = None) -> str:
    """Graph text export: fixed field order, one JSON document."""
    return json.dumps(graph_to_dict(g, annotations), indent=1) + "\n"


_SHAPES = {"file": "ellipse", "process": "box", "socket": "diamond"}


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(g: SemanticGraph, name: str = "ssg") -> str:
    """Graphviz rendering: rectangles for processes, ellipses for files, diamonds for sockets."""
    out = [f"digraph {name} {{", "  rankdir=LR;"]
    for u in g.nodes:
        out.append(f"  {_dot_quote(str(u))} [shape={_SHAPES[u.kind.value]}, label={_dot_quote(u.key)}];")
    for e in g.edges:
        label = f"{e.op.value} t={e.ti} d={e.d}"
        if len(e.eids) > 1:
            label += f" x{len(e.eids)}"
        attrs = [f"label={_dot_quote(label)}"]
        if e == g.poi:
            attrs.append("color=red")
            attrs.append("penwidth=2")
        out.append(f"  {_dot_quote(str(e.us))} -> {_dot_quote(str(e.uo))} [{', '.join(attrs)}];")
    out.append("}")
    return "\n".join(out) + "\n"
