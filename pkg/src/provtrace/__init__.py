"""Streaming attack investigation over system audit logs.

Events are consumed one at a time; suspicion spreads from untrusted sockets
through processes and files, and each suspicious entity remembers the events
that made it so. Given a point-of-interest event, the related events form a
small graph whose flow paths are scored to keep only the ones that matter.
"""

from .engine import ColdStore, SemanticEngine, SocketWhitelist
from .errors import (
    EventFormatError,
    NotSuspiciousError,
    PoiUnreachableError,
    ProvtraceError,
    SelectorError,
    SequencingError,
    TierStorageError,
    UnsupportedOperation,
)
from .evaluation import GroundTruth, MetricsReport, backtrack, evaluate, run_log, sweep
from .graph import GraphEdge, SemanticGraph, build_ssg, compact_edges, graph_to_dot, graph_to_json
from .model import EntityId, EntityKind, Event, Op, canonicalize, parse_event_line, read_events
from .paths import Investigation, ScoringParams, extract_sfps, investigate
from .scenario import Scenario, ScenarioSpec, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "ColdStore",
    "EntityId",
    "EntityKind",
    "Event",
    "EventFormatError",
    "GraphEdge",
    "GroundTruth",
    "Investigation",
    "MetricsReport",
    "NotSuspiciousError",
    "Op",
    "PoiUnreachableError",
    "ProvtraceError",
    "Scenario",
    "ScenarioSpec",
    "ScoringParams",
    "SelectorError",
    "SemanticEngine",
    "SemanticGraph",
    "SequencingError",
    "SocketWhitelist",
    "TierStorageError",
    "UnsupportedOperation",
    "backtrack",
    "build_ssg",
    "canonicalize",
    "compact_edges",
    "evaluate",
    "extract_sfps",
    "generate_scenario",
    "graph_to_dot",
    "graph_to_json",
    "investigate",
    "parse_event_line",
    "read_events",
    "run_log",
    "sweep",
]
