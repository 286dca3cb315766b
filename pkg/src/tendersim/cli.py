"""Command-line entry points.

Exit codes: 0 success, 1 a check failed (or a run hit its horizon), 2 bad config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .analysis import (
    MissingDecision,
    ScheduleViolation,
    audit_delivery,
    bound,
    check_agreement,
    check_case3_schedule,
    check_termination,
    read_trace,
)
from .adversary import WORST_CASE
from .config import ConfigError, ScenarioConfig, load_config, presets
from .harness import HorizonExceeded, Simulation, write_trace

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def resolve_config(ref: str) -> ScenarioConfig:
    """A path to a JSON file, or the name of a built-in preset."""
    if not Path(ref).exists() and ref in presets():
        return presets()[ref][1]
    return load_config(ref)


def trace_dir() -> Path:
    return Path(os.environ.get("SIM_TRACE_DIR", "traces"))


def default_trace_path(config: ScenarioConfig, seed: int) -> Path:
    return trace_dir() / f"{config.name or 'run'}-{seed}.jsonl"


def parse_seeds(text: str) -> List[int]:
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError("empty seed range")
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",") if x]


def check_all(trace: List[Dict[str, Any]], config: ScenarioConfig) -> Tuple[bool, Dict[str, Any]]:
    report: Dict[str, Any] = {}
    ok = True
    agreement = check_agreement(trace)
    report["agreement"] = "ok" if agreement.ok else {
        "height": agreement.height, "values": list(agreement.values), "nodes": list(agreement.nodes),
        "reason": agreement.reason}
    ok &= agreement.ok
    try:
        term = check_termination(trace, config)
        report["termination"] = {"tStar": term.tStar, "gst": term.gst,
                                 "measured": {str(h): t for h, t in term.measured.items()},
                                 "compliant": {str(h): c for h, c in term.compliant.items()}}
        ok &= term.ok
    except MissingDecision as exc:
        report["termination"] = {"missingDecision": {"height": exc.height, "node": exc.node}}
        ok = False
    if config.adversary.strategy == WORST_CASE and config.gst == 0:
        try:
            case = check_case3_schedule(trace, config)
            report["schedule"] = {"round": case.round, "t": case.t, "limits": case.limits}
        except ScheduleViolation as exc:
            report["schedule"] = {"violation": exc.milestone, "node": exc.node, "at": exc.at, "limit": exc.limit}
            ok = False
    violations = audit_delivery(trace, config)
    report["delivery"] = "ok" if not violations else [v.__dict__ for v in violations[:5]]
    ok &= not violations
    return ok, report


def _dump(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    out = Path(args.trace) if args.trace else default_trace_path(config, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    sim = Simulation(config, seed)
    try:
        result = sim.run()
    except HorizonExceeded as exc:
        write_trace(out, exc.trace)
        _dump({"status": "HorizonExceeded", "maxTicks": exc.max_ticks, "trace": str(out),
               "decisions": {str(k): v for k, v in exc.decided.items()}})
        return EXIT_VIOLATION
    write_trace(out, result.trace)
    _dump({"status": "ok", "seed": seed, "finalTick": result.final_tick, "trace": str(out),
           "records": len(result.trace), "corrupted": list(result.corrupted),
           "decisions": {str(k): v for k, v in result.decisions.items()}})
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    try:
        trace = read_trace(args.trace)
    except (OSError, ValueError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ok, report = check_all(trace, config)
    report["status"] = "ok" if ok else "violation"
    _dump(report)
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_bound(args: argparse.Namespace) -> int:
    if args.f < 0 or args.delta < 0:
        print("f and delta must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    print(bound(args.f, args.delta))
    return EXIT_OK


def _batch_one(job: Tuple[Dict[str, Any], int, Optional[str]]) -> Dict[str, Any]:
    cfg_json, seed, out_dir = job
    config = ScenarioConfig.from_json(cfg_json)
    try:
        result = Simulation(config, seed).run()
        trace = result.trace
        status = "ok"
    except HorizonExceeded as exc:
        trace = exc.trace
        status = "HorizonExceeded"
    if out_dir:
        write_trace(Path(out_dir) / f"{config.name or 'run'}-{seed}.jsonl", trace)
    ok, report = check_all(trace, config)
    ok &= status == "ok"
    measured = report.get("termination", {}).get("measured", {})
    return {"seed": seed, "status": status, "ok": ok, "measured": measured,
            "agreement": report["agreement"] == "ok"}


def cmd_batch(args: argparse.Namespace) -> int:
    config = resolve_config(args.config)
    try:
        seeds = parse_seeds(args.seeds)
    except ValueError as exc:
        print(f"bad --seeds: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.trace_dir
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    cfg_json = config.to_json()
    jobs = [(cfg_json, s, out_dir) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_batch_one, jobs))
    else:
        results = [_batch_one(j) for j in jobs]
    times = [max(r["measured"].values()) for r in results if r["measured"]]
    failed = [r["seed"] for r in results if not r["ok"]]
    summary: Dict[str, Any] = {"runs": len(results), "failed": failed,
                               "agreementFailures": [r["seed"] for r in results if not r["agreement"]]}
    if times:
        summary["decisionTime"] = {"min": min(times), "max": max(times), "mean": sum(times) / len(times)}
    _dump(summary)
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    table = presets()
    if args.action == "list":
        for name, (desc, cfg) in table.items():
            print(f"{name:8s} n={cfg.n} strategy={cfg.adversary.strategy:20s} {desc}")
        return EXIT_OK
    if not args.name or args.name not in table:
        print(f"unknown preset {args.name!r}; choose from {', '.join(table)}", file=sys.stderr)
        return EXIT_CONFIG
    desc, cfg = table[args.name]
    out = {"comment": desc}
    out.update(cfg.to_json())
    _dump(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tendersim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one scenario and write its trace")
    r.add_argument("--config", required=True, help="JSON config path or preset name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace", default=None, help="output JSONL path (default $SIM_TRACE_DIR/<name>-<seed>.jsonl)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="agreement, bound, schedule and delivery checks on a trace file")
    c.add_argument("--trace", required=True)
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_check)

    b = sub.add_parser("bound", help="print 2(f+2)(f+3)delta")
    b.add_argument("--f", type=int, required=True)
    b.add_argument("--delta", type=int, required=True)
    b.set_defaults(func=cmd_bound)

    bt = sub.add_parser("batch", help="sweep seeds; nonzero exit on any violation")
    bt.add_argument("--config", required=True)
    bt.add_argument("--seeds", required=True, help="A..B or a comma list")
    bt.add_argument("--jobs", type=int, default=1)
    bt.add_argument("--trace-dir", default=None)
    bt.set_defaults(func=cmd_batch)

    s = sub.add_parser("scenario", help="built-in presets")
    s.add_argument("action", choices=["list", "show"])
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
