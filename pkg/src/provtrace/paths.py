"""Suspicious flow path extraction, path-level scoring and CCG filtering."""

from __future__ import annotations

import json
import math
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .graph import DEFAULT_WINDOW_NS, GraphEdge, SemanticGraph, build_ssg, compact_edges, graph_to_json
from .model import Event

ALL_PATHS_FILTERED = "all paths filtered"

Features = Mapping[GraphEdge, tuple[float, float]]


@dataclass(frozen=True)
class ScoringParams:
    c: float = 5.0
    t: float = 0.5

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"inflation divisor C must be positive, got {self.c}")


@dataclass
class FlowTree:
    """Multiway tree of events rooted at the POI; node 0 is the root.

    A node's children are the incoming edges of its subject that happened
    strictly earlier and were not already placed elsewhere in the tree.
    """

    edges: list[GraphEdge]
    parent: list[int]
    children: list[list[int]]

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def root(self) -> GraphEdge:
        return self.edges[0]

    def index(self) -> dict[GraphEdge, int]:
        return {e: i for i, e in enumerate(self.edges)}

    def leaf_paths(self) -> list[list[int]]:
        """Every root-to-leaf node sequence, children visited in insertion order."""
        paths: list[list[int]] = []
        stack: list[tuple[int, list[int]]] = [(0, [0])]
        while stack:
            node, trail = stack.pop()
            kids = self.children[node]
            if not kids:
                paths.append(trail)
                continue
            for k in reversed(kids):
                stack.append((k, trail + [k]))
        return paths


@dataclass
class FlowPath:
    nodes: list[int]
    edges: list[GraphEdge]
    score: float = float("nan")

    def __len__(self) -> int:
        return len(self.nodes)


def extract_sfps(g: SemanticGraph) -> tuple[FlowTree, list[FlowPath]]:
    """Breadth-first backward walk from the POI edge.

    Candidate incoming edges are examined newest first (descending ti, then
    eid) so the tree shape is reproducible; an edge reachable from several
    parents attaches to whichever parent is dequeued first.
    """
    incoming = g.in_edges()
    for lst in incoming.values():
        lst.sort(key=lambda e: (-e.ti, e.eids[0]))

    tree = FlowTree([g.poi], [-1], [[]])
    seen = {g.poi}
    queue = deque([0])
    while queue:
        node = queue.popleft()
        e = tree.edges[node]
        for ie in incoming.get(e.us, ()):
            if ie.ti < e.ti and ie not in seen:
                seen.add(ie)
                child = len(tree.edges)
                tree.edges.append(ie)
                tree.parent.append(node)
                tree.children.append([])
                tree.children[node].append(child)
                queue.append(child)
    paths = [FlowPath(p, [tree.edges[i] for i in p]) for p in tree.leaf_paths()]
    return tree, paths


def _minmax(values: Sequence[int | float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    span = hi - lo
    return [(v - lo) / span for v in values]


def normalize_features(g: SemanticGraph) -> dict[GraphEdge, tuple[float, float]]:
    """Min-max scale data amount and timestamp over every edge of the graph.

    A feature with no spread maps to 1 for every edge. Integer inputs are
    divided exactly once, so any positive integer affine rescaling of d or ti
    yields bit-identical features.
    """
    if not g.edges:
        raise ValueError("cannot normalize an empty graph")
    edges = list(g.edges)
    ds = _minmax([e.d for e in edges])
    ts = _minmax([e.ti for e in edges])
    return {e: (d, t) for e, d, t in zip(edges, ds, ts)}


def impact(e1: GraphEdge, e2: GraphEdge, features: Features) -> float:
    """Cosine similarity of the two edges' normalized (d, ti) vectors; 0 for a zero vector."""
    return cosine(features[e1], features[e2])


def cosine(a: tuple[float, float], b: tuple[float, float]) -> float:
    na = math.hypot(a[0], a[1])
    nb = math.hypot(b[0], b[1])
    if na == 0.0 or nb == 0.0:
        return 0.0
    return (a[0] * b[0] + a[1] * b[1]) / (na * nb)


def inflation(n_children: int, c: float) -> float:
    return 1.0 + (n_children - 1) / c


def event_scores(tree: FlowTree, features: Features, c: float) -> list[float]:
    """Score of every tree node: its impact share among siblings, inflated by fan-in.

    The root scores 1. When every sibling has zero impact the share is split
    uniformly.
    """
    scores = [0.0] * len(tree)
    scores[0] = 1.0
    for f, kids in enumerate(tree.children):
        if not kids:
            continue
        parent_edge = tree.edges[f]
        imps = [impact(tree.edges[k], parent_edge, features) for k in kids]
        alpha = inflation(len(kids), c)
        total = math.fsum(imps)
        if total == 0.0:
            share = alpha / len(kids)
            for k in kids:
                scores[k] = share
        else:
            for k, imp in zip(kids, imps):
                scores[k] = alpha * imp / total
    return scores


def event_score(tree: FlowTree, node: int, features: Features, c: float) -> float:
    if node == 0:
        return 1.0
    f = tree.parent[node]
    kids = tree.children[f]
    parent_edge = tree.edges[f]
    imps = [impact(tree.edges[k], parent_edge, features) for k in kids]
    alpha = inflation(len(kids), c)
    total = math.fsum(imps)
    if total == 0.0:
        return alpha / len(kids)
    return alpha * imps[kids.index(node)] / total


def path_score(path: FlowPath, scores: Sequence[float]) -> float:
    """Mean event score along the path, POI included."""
    return math.fsum(scores[i] for i in path.nodes) / len(path.nodes)


def score_paths(tree: FlowTree, paths: Sequence[FlowPath], features: Features,
                c: float) -> list[float]:
    scores = event_scores(tree, features, c)
    for p in paths:
        p.score = path_score(p, scores)
    return scores


def build_ccg(g: SemanticGraph, paths: Sequence[FlowPath], t: float) -> SemanticGraph:
    """Keep every edge on at least one path scoring >= t; the POI edge always stays."""
    kept: set[GraphEdge] = {g.poi}
    relevant = 0
    for p in paths:
        if p.score >= t:
            relevant += 1
            kept.update(p.edges)
    flags = set(g.flags)
    if relevant == 0:
        flags.add(ALL_PATHS_FILTERED)
    return SemanticGraph.from_edges((e for e in g.edges if e in kept), g.poi, flags)


@dataclass
class Investigation:
    poi: Event
    ssg: SemanticGraph
    compacted: SemanticGraph
    tree: FlowTree
    paths: list[FlowPath]
    event_scores: list[float]
    ccg: SemanticGraph
    params: ScoringParams
    window_ns: int
    stats: dict[str, Any] = field(default_factory=dict)

    def path_report(self) -> str:
        return path_report_json(self.paths, self.params.t)

    def ccg_json(self) -> str:
        return graph_to_json(self.ccg, ccg_annotations(self))


def investigate(snapshot: Sequence[Event], poi: Event, params: ScoringParams | None = None,
                window_ns: int = DEFAULT_WINDOW_NS) -> Investigation:
    """Run the whole second phase on one POI: SSG, compaction, paths, scores, CCG."""
    params = params or ScoringParams()
    ssg = build_ssg(snapshot, poi)
    compacted = compact_edges(ssg, window_ns)
    tree, paths = extract_sfps(compacted)
    features = normalize_features(compacted)
    scores = score_paths(tree, paths, features, params.c)
    ccg = build_ccg(compacted, paths, params.t)
    stats = {
        "ssg_edges": len(ssg.edges),
        "ssg_nodes": len(ssg.nodes),
        "compacted_edges": len(compacted.edges),
        "tree_nodes": len(tree),
        "paths": len(paths),
        "relevant_paths": sum(p.score >= params.t for p in paths),
        "ccg_edges": len(ccg.edges),
        "ccg_nodes": len(ccg.nodes),
        "ccg_eids": len(ccg.eid_set()),
        "all_paths_filtered": ALL_PATHS_FILTERED in ccg.flags,
    }
    return Investigation(poi, ssg, compacted, tree, paths, scores, ccg, params, window_ns, stats)


def rescore(inv: Investigation, params: ScoringParams) -> SemanticGraph:
    """CCG for other scoring parameters, reusing the tree already built."""
    features = normalize_features(inv.compacted)
    paths = [FlowPath(p.nodes, p.edges) for p in inv.paths]
    score_paths(inv.tree, paths, features, params.c)
    return build_ccg(inv.compacted, paths, params.t)


def path_report_json(paths: Sequence[FlowPath], t: float) -> str:
    rows = []
    for i, p in enumerate(paths):
        rows.append({
            "path": i,
            "score": p.score,
            "verdict": "relevant" if p.score >= t else "irrelevant",
            "edges": [list(e.eids) for e in p.edges],
        })
    return json.dumps({"threshold": t, "paths": rows}, indent=1) + "\n"


def ccg_annotations(inv: Investigation) -> dict[GraphEdge, dict[str, Any]]:
    idx = inv.tree.index()
    retained: dict[GraphEdge, list[int]] = {}
    for i, p in enumerate(inv.paths):
        if p.score >= inv.params.t:
            for e in p.edges:
                retained.setdefault(e, []).append(i)
    out = {}
    for e in inv.ccg.edges:
        node = idx.get(e)
        out[e] = {
            "event_score": inv.event_scores[node] if node is not None else None,
            "retained_by": retained.get(e, []),
        }
    return out
