"""Command-line front end: ingest, investigate, eval, generate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import resource
import sys
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .engine import DEFAULT_HOT_CAP, SemanticEngine, SocketWhitelist
from .errors import (
    EventFormatError,
    PoiUnreachableError,
    ProvtraceError,
    SelectorError,
    UnsupportedOperation,
)
from .evaluation import (
    C_GRID,
    T_GRID,
    GroundTruth,
    backtrack,
    evaluate,
    grid_table,
    run_log,
    stage_counts,
    sweep,
)
from .graph import graph_to_dot, graph_to_json
from .model import NS_PER_SEC, EntityId, Event, Op, ReadStats, parse_event_line, read_events
from .paths import ScoringParams, investigate
from .scenario import ScenarioSpec, generate_scenario

log = logging.getLogger("provtrace")

ENV_PREFIX = "PROVTRACE_"
FORMATS = ("graph-text", "visualization")
DEFAULT_CHECKPOINT_EVERY = 1_000_000


@dataclass
class RunConfig:
    input: str | None = None
    state_dir: Path | None = None
    out_dir: Path | None = None
    params: ScoringParams = field(default_factory=ScoringParams)
    window_ns: int = 10 * NS_PER_SEC
    hot_cap: int = DEFAULT_HOT_CAP
    whitelist: Path | None = None
    formats: tuple[str, ...] = FORMATS

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> RunConfig:
        if args.window_secs < 0:
            raise ValueError("--window-secs must be non-negative")
        if args.hot_cap < 1:
            raise ValueError("--hot-cap must be at least 1")
        formats = tuple(dict.fromkeys(args.format or FORMATS))
        return cls(
            input=getattr(args, "input", None),
            state_dir=Path(args.state_dir) if args.state_dir else None,
            out_dir=Path(args.out_dir) if args.out_dir else None,
            params=ScoringParams(args.c, args.t),
            window_ns=round(args.window_secs * NS_PER_SEC),
            hot_cap=args.hot_cap,
            whitelist=Path(args.whitelist) if args.whitelist else None,
            formats=formats,
        )

    def whitelist_entries(self) -> list[str] | None:
        if self.whitelist is None:
            return None
        return SocketWhitelist.from_file(self.whitelist).entries


def _require_file(path: Path | str | None, what: str) -> None:
    if path is None:
        raise ValueError(f"{what} is required")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")


def _require_state(cfg: RunConfig) -> Path:
    if cfg.state_dir is None:
        raise ValueError("--state-dir is required")
    if not (cfg.state_dir / "meta.json").is_file():
        raise FileNotFoundError(f"no engine state in {cfg.state_dir} (run ingest first)")
    return cfg.state_dir


def _require_out(cfg: RunConfig) -> Path:
    if cfg.out_dir is None:
        raise ValueError("--out-dir is required")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def _peak_rss_mb() -> float:
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    if sys.platform == "darwin":
        kb //= 1024
    return round(kb / 1024, 1)


def _emit(summary: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(summary, sort_keys=True))
    else:
        width = max(map(len, summary))
        for key, value in summary.items():
            print(f"{key:<{width}}  {value}")


def _open_lines(source: str) -> Iterable[str]:
    if source == "-":
        return sys.stdin
    return open(source, encoding="utf-8")


# -- ingest ---------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> int:
    state = cfg.state_dir
    if state is None:
        raise ValueError("--state-dir is required")
    source = cfg.input or "-"
    if source != "-":
        _require_file(source, "input log")
    if cfg.whitelist is not None:
        _require_file(cfg.whitelist, "whitelist")
    whitelist = cfg.whitelist_entries()

    if (state / "meta.json").is_file():
        engine = SemanticEngine.restore(state, hot_cap=cfg.hot_cap if args.hot_cap_set else None,
                                        whitelist=whitelist)
    else:
        state.mkdir(parents=True, exist_ok=True)
        engine = SemanticEngine(hot_cap=cfg.hot_cap, whitelist=whitelist or (),
                                cold_dir=state / "cold")

    stats = ReadStats()
    every = args.checkpoint_every
    busy = 0.0
    fh = _open_lines(source)
    try:
        for lineno, line in enumerate(fh, 1):
            t = time.perf_counter()
            try:
                event = parse_event_line(line, engine.next_eid)
            except UnsupportedOperation:
                stats.unsupported += 1
                continue
            except EventFormatError as exc:
                if args.strict:
                    raise EventFormatError(f"line {lineno}: {exc}") from exc
                stats.errors.append((lineno, str(exc)))
                continue
            if event is None:
                stats.blank += 1
                continue
            engine.process_event(event)
            busy += time.perf_counter() - t
            stats.consumed += 1
            if every and stats.consumed % every == 0:
                engine.checkpoint(state)
                log.info("checkpoint after %d events", stats.consumed)
    finally:
        if fh is not sys.stdin:
            fh.close()
    engine.checkpoint(state)
    sizes = engine.state_size()
    engine.close()

    for lineno, msg in stats.errors[:20]:
        print(f"line {lineno}: {msg}", file=sys.stderr)
    if len(stats.errors) > 20:
        print(f"... {len(stats.errors) - 20} more rejected lines", file=sys.stderr)
    summary = {
        "events_consumed": stats.consumed,
        "events_per_sec": round(stats.consumed / busy) if busy > 0 else 0,
        "sel_size": sizes["sel"],
        "ret_hot": sizes["hot"],
        "ret_cold": sizes["cold"],
        "tainted_sockets": sizes["tainted_sockets"],
        "blank_lines": stats.blank,
        "unsupported": stats.unsupported,
        "rejected": len(stats.errors),
        "peak_rss_mb": _peak_rss_mb(),
    }
    _emit(summary, args.json)
    return 1 if stats.errors else 0


# -- investigate ----------------------------------------------------------------


def select_poi(engine: SemanticEngine, eid: int | None = None, obj: str | None = None,
               op: str | None = None) -> Event:
    """Resolve a POI selector; key-based selection picks the latest matching event."""
    if eid is not None:
        if eid < 1 or eid >= engine.next_eid:
            raise SelectorError(f"no event with eid {eid} (stream holds 1..{engine.next_eid - 1})")
        event = engine.events.get(eid)
        if event is None:
            raise PoiUnreachableError(f"POI not semantically reachable: event {eid} carried no suspicious semantics")
        return event
    if obj is None:
        raise SelectorError("give --poi-eid or --poi-object")
    target = EntityId.parse(obj)
    want = Op(op) if op else None
    best = None
    for e in engine.events.values():
        if e.uo == target and (want is None or e.op is want):
            if best is None or e.eid > best.eid:
                best = e
    if best is None:
        extra = f" with op {op}" if op else ""
        raise SelectorError(f"no recorded event into {target}{extra}")
    return best


def cmd_investigate(cfg: RunConfig, args: argparse.Namespace) -> int:
    state = _require_state(cfg)
    out = _require_out(cfg)
    started = time.perf_counter()
    engine = SemanticEngine.restore(state)
    try:
        poi = select_poi(engine, args.poi_eid, args.poi_object, args.poi_op)
        snapshot = engine.snapshot_related(poi.uo)
    finally:
        engine.close()
    inv = investigate(snapshot, poi, cfg.params, cfg.window_ns)

    written = []
    graphs = (("ssg", inv.ssg, None), ("ssg_compacted", inv.compacted, None), ("ccg", inv.ccg, "ccg"))
    if "graph-text" in cfg.formats:
        for name, g, kind in graphs:
            text = inv.ccg_json() if kind == "ccg" else graph_to_json(g)
            (out / f"{name}.json").write_text(text, encoding="utf-8")
            written.append(f"{name}.json")
    if "visualization" in cfg.formats:
        for name, g, _ in graphs:
            (out / f"{name}.dot").write_text(graph_to_dot(g, name), encoding="utf-8")
            written.append(f"{name}.dot")
    (out / "paths.json").write_text(inv.path_report(), encoding="utf-8")
    written.append("paths.json")

    summary = {
        "poi_eid": poi.eid,
        "ssg_edges": inv.stats["ssg_edges"],
        "compacted_edges": inv.stats["compacted_edges"],
        "paths": inv.stats["paths"],
        "relevant_paths": inv.stats["relevant_paths"],
        "ccg_edges": inv.stats["ccg_edges"],
        "all_paths_filtered": inv.stats["all_paths_filtered"],
        "wall_secs": round(time.perf_counter() - started, 3),
        "files": ",".join(written),
    }
    _emit(summary, args.json)
    return 0


# -- eval -----------------------------------------------------------------------


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require_file(cfg.input, "--log")
    _require_file(args.ground_truth, "--ground-truth")
    if cfg.whitelist is not None:
        _require_file(cfg.whitelist, "whitelist")
    out = _require_out(cfg) if cfg.out_dir is not None else None

    with open(cfg.input, encoding="utf-8") as fh:
        events = list(read_events(fh, strict=True))
    gt = GroundTruth.load(args.ground_truth)
    poi_eid = args.poi_eid if args.poi_eid is not None else gt.poi
    if poi_eid is None:
        raise SelectorError("ground truth names no POI; pass --poi-eid")
    if not 1 <= poi_eid <= len(events):
        raise SelectorError(f"no event with eid {poi_eid} in the log")
    poi = events[poi_eid - 1]

    bt = backtrack(events, poi)
    if gt.e_total != len(bt):
        log.info("ground truth e_total=%d, backtracking graph has %d edges", gt.e_total, len(bt))
    inv = run_log(events, poi, params=cfg.params, window_ns=cfg.window_ns,
                  whitelist=cfg.whitelist_entries() or (), hot_cap=cfg.hot_cap)
    stages = stage_counts(inv, bt)
    report = evaluate(inv.ccg, gt, known_eids=range(1, len(events) + 1), stages=stages)
    if out is not None:
        (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")

    if args.sweep:
        cells = sweep(events, poi, gt, C_GRID, T_GRID, window_ns=cfg.window_ns, inv=inv)
        table = grid_table(cells)
        if out is not None:
            (out / "grid.csv").write_text(table, encoding="utf-8")
        else:
            sys.stdout.write(table)

    summary = {
        "fp": report.fp,
        "fn": report.fn,
        "fpr": str(report.fpr),
        "fnr": str(report.fnr),
        "identified": report.identified,
        "critical": report.critical,
        "e_total": report.e_total,
        **{f"stage_{k}": v for k, v in stages.items()},
    }
    _emit(summary, args.json)
    return 0


# -- generate -------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _require_out(cfg)
    data: dict = {}
    if args.spec:
        _require_file(args.spec, "--spec")
        data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    for name in ("template", "seed", "benign_events", "decoys", "burst_chunks"):
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    spec = ScenarioSpec.from_dict(data)
    scenario = generate_scenario(spec)
    files = scenario.write(out)
    summary = {
        "template": spec.template,
        "seed": spec.seed,
        "events": len(scenario.lines),
        "critical": len(scenario.critical),
        "poi_eid": scenario.poi_eid,
        "files": ",".join(p.name for p in files.values()),
    }
    _emit(summary, args.json)
    return 0


# -- argument parsing -------------------------------------------------------------


def _env(name: str, default=None, conv=str):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return default
    try:
        return conv(raw)
    except ValueError:
        raise SystemExit(f"provtrace: error: bad value for {ENV_PREFIX}{name}: {raw!r}") from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--state-dir", default=_env("STATE_DIR"), help="engine state directory")
    p.add_argument("--out-dir", default=_env("OUT_DIR"), help="directory for artifacts")
    p.add_argument("--c", type=float, default=_env("C", 5.0, float), help="inflation divisor C (default 5)")
    p.add_argument("--t", type=float, default=_env("T", 0.5, float), help="path threshold T (default 0.5)")
    p.add_argument("--window-secs", type=float, default=_env("WINDOW_SECS", 10.0, float),
                   help="edge compaction window in seconds (default 10)")
    p.add_argument("--hot-cap", type=int, default=None,
                   help=f"in-memory RET entries before eviction (default {DEFAULT_HOT_CAP})")
    p.add_argument("--whitelist", default=_env("WHITELIST"),
                   help="file of trusted socket keys or CIDR prefixes, one per line")
    env_formats = _env("FORMAT")
    p.add_argument("--format", action="append", choices=FORMATS,
                   default=env_formats.split(",") if env_formats else None,
                   help="output format; repeatable (default: both)")
    p.add_argument("--json", action="store_true", help="print the summary as one JSON object")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="provtrace", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="consume an event stream into a state dir")
    p.add_argument("input", nargs="?", default="-", help="canonical log file, or - for stdin")
    p.add_argument("--checkpoint-every", type=int, default=DEFAULT_CHECKPOINT_EVERY,
                   help="persist state every N events (0 disables)")
    p.add_argument("--strict", action="store_true", help="abort on the first malformed line")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("investigate", parents=[common], help="build SSG, paths and CCG for a POI")
    p.add_argument("--poi-eid", type=int, default=_env("POI_EID", None, int))
    p.add_argument("--poi-object", help="object entity, e.g. socket:10.0.0.2:50022>192.168.2.3:22")
    p.add_argument("--poi-op", choices=[o.value for o in Op], help="restrict --poi-object to one op")
    p.set_defaults(func=cmd_investigate)

    p = sub.add_parser("eval", parents=[common], help="score a log against ground truth")
    p.add_argument("--log", dest="input", required=True, help="canonical log file")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--poi-eid", type=int, default=_env("POI_EID", None, int))
    p.add_argument("--sweep", action="store_true", help="also run the 9x9 (C, T) grid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic labeled scenario")
    p.add_argument("--spec", help="JSON file with scenario fields")
    p.add_argument("--template", choices=("dataleak", "wget_executable", "illegal_storage"))
    p.add_argument("--seed", type=int)
    p.add_argument("--benign-events", type=int)
    p.add_argument("--decoys", type=int)
    p.add_argument("--burst-chunks", type=int)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.hot_cap_set = args.hot_cap is not None or _env("HOT_CAP") is not None
    if args.hot_cap is None:
        args.hot_cap = _env("HOT_CAP", DEFAULT_HOT_CAP, int)
    try:
        cfg = RunConfig.from_args(args)
        return args.func(cfg, args)
    except (ProvtraceError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"provtrace: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
