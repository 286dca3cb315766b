"""Trace checkers. Every function here works from trace records alone (plus the
scenario config for parameters), never from live simulator objects."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple, Union

from .config import ScenarioConfig

Trace = List[Dict[str, Any]]


def bound(f: int, delta: int) -> int:
    """Worst-case time to the first decision after GST when f rounds are killed."""
    if f < 0 or delta < 0:
        raise ValueError("f and delta must be >= 0")
    return 2 * (f + 2) * (f + 3) * delta


def bound_expanded(f: int, tau_init: int, tau_step: int) -> int:
    """Four phase timeouts for each killed round 0..f plus four for round f+1."""
    tau = lambda r: tau_init + r * tau_step  # noqa: E731
    return 4 * sum(tau(r) for r in range(f + 1)) + 4 * tau(f + 1)


def read_trace(path: Union[str, Path]) -> Trace:
    out: Trace = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def corrupted_nodes(trace: Iterable[Dict[str, Any]]) -> Set[int]:
    return {r["node"] for r in trace if r["kind"] == "corrupt"}


def honest_nodes(trace: Trace, n: int) -> List[int]:
    bad = corrupted_nodes(trace)
    return [i for i in range(n) if i not in bad]


# ---------------------------------------------------------------------------
# agreement


@dataclass(frozen=True)
class Agreement:
    heights: int

    ok = True


@dataclass(frozen=True)
class Conflict:
    height: int
    values: Tuple[str, ...]
    nodes: Tuple[int, ...]
    reason: str = "conflicting decisions"

    ok = False


def check_agreement(trace: Trace) -> Union[Agreement, Conflict]:
    bad = corrupted_nodes(trace)
    by_height: Dict[int, Dict[str, Set[int]]] = {}
    per_node: Dict[Tuple[int, int], str] = {}
    for r in trace:
        if r["node"] in bad:
            continue
        if r["kind"] == "double_decide":
            p = r["payload"]
            return Conflict(r["height"], tuple(sorted((p["existing"], p["attempted"]))), (r["node"],),
                            "double decision")
        if r["kind"] != "decide":
            continue
        h, node, value = r["height"], r["node"], r["payload"]["blockId"]
        prior = per_node.get((h, node))
        if prior is not None and prior != value:
            return Conflict(h, tuple(sorted((prior, value))), (node,), "double decision")
        per_node[(h, node)] = value
        by_height.setdefault(h, {}).setdefault(value, set()).add(node)
    for h in sorted(by_height):
        groups = by_height[h]
        if len(groups) > 1:
            nodes = sorted(set().union(*groups.values()))
            return Conflict(h, tuple(sorted(groups)), tuple(nodes))
    return Agreement(len(by_height))


# ---------------------------------------------------------------------------
# termination


class MissingDecision(Exception):
    def __init__(self, height: int, node: int):
        super().__init__(f"honest node {node} never decided height {height}")
        self.height = height
        self.node = node


@dataclass
class BoundReport:
    f: int
    delta: int
    tStar: int
    gst: int
    measured: Dict[int, int] = field(default_factory=dict)
    compliant: Dict[int, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.compliant.values())

    def stats(self) -> Dict[str, float]:
        vals = list(self.measured.values())
        if not vals:
            return {}
        return {"min": min(vals), "max": max(vals), "mean": sum(vals) / len(vals)}


def decide_times(trace: Trace, honest: Iterable[int]) -> Dict[Tuple[int, int], int]:
    hs = set(honest)
    out: Dict[Tuple[int, int], int] = {}
    for r in trace:
        if r["kind"] == "decide" and r["node"] in hs:
            out.setdefault((r["height"], r["node"]), r["t"])
    return out


def check_termination(trace: Trace, config: ScenarioConfig) -> BoundReport:
    f = config.f_eff
    t_star = bound(f, config.delta)
    report = BoundReport(f, config.delta, t_star, config.gst)
    honest = honest_nodes(trace, config.n)
    times = decide_times(trace, honest)
    for h in range(1, config.heights + 1):
        for node in honest:
            if (h, node) not in times:
                raise MissingDecision(h, node)
        report.measured[h] = max(times[(h, node)] for node in honest)
        report.compliant[h] = report.measured[h] <= config.gst + t_star
    return report


# ---------------------------------------------------------------------------
# round-f+1 schedule after f killed rounds


class ScheduleViolation(Exception):
    def __init__(self, milestone: str, node: Optional[int], at: Optional[int], limit: int):
        super().__init__(f"{milestone}: node {node} at {at} exceeds {limit}")
        self.milestone = milestone
        self.node = node
        self.at = at
        self.limit = limit


@dataclass
class CaseReport:
    round: int
    t: int
    limits: Dict[str, int]
    observed: Dict[str, Dict[int, int]]
    ok: bool = True


def prevote_quorum_times(trace: Trace, honest: Iterable[int], height: int, round: int, q: int) -> Dict[int, int]:
    """Per receiver: the tick at which 2f+1 distinct prevote senders had arrived."""
    hs = set(honest)
    seen: Dict[int, Set[int]] = {}
    out: Dict[int, int] = {}
    for r in trace:
        if r["kind"] != "deliver" or r["node"] not in hs:
            continue
        m = r["payload"]["msg"]
        if m["kind"] != "PREVOTE" or m["h"] != height or m["r"] != round:
            continue
        s = seen.setdefault(r["node"], set())
        s.add(m["from"])
        if len(s) >= q and r["node"] not in out:
            out[r["node"]] = r["t"]
    return out


def check_case3_schedule(trace: Trace, config: ScenarioConfig, height: int = 1) -> CaseReport:
    f = config.f_eff
    rnd = f + 1
    params = config.time_params()
    tau_prev = params.tau(rnd - 1)
    honest = honest_nodes(trace, config.n)
    hs = set(honest)
    entries: Dict[int, int] = {}
    for r in trace:
        if r["kind"] == "new_round" and r["node"] in hs and r["height"] == height and r["round"] == rnd:
            entries.setdefault(r["node"], r["t"])
    if not entries:
        raise ScheduleViolation("round entry", None, None, -1)
    t = min(entries.values())
    d = config.delta
    limits = {"round_entry": t + d + tau_prev, "prevote_quorum": t + 3 * d + tau_prev,
              "decide": t + 5 * d + tau_prev}
    quorum = prevote_quorum_times(trace, honest, height, rnd, 2 * f + 1)
    decides = {node: tt for (h, node), tt in decide_times(trace, honest).items() if h == height}
    observed = {"round_entry": entries, "prevote_quorum": quorum, "decide": decides}
    for node in honest:
        if node not in decides:
            raise ScheduleViolation("decide", node, None, limits["decide"])
    for milestone in ("round_entry", "prevote_quorum", "decide"):
        for node, at in sorted(observed[milestone].items()):
            if at > limits[milestone]:
                raise ScheduleViolation(milestone, node, at, limits[milestone])
    return CaseReport(rnd, t, limits, observed)


# ---------------------------------------------------------------------------
# network audit


@dataclass(frozen=True)
class DeliveryViolation:
    mid: int
    sent: int
    delivered: int
    reason: str


def audit_delivery(trace: Trace, config: ScenarioConfig) -> List[DeliveryViolation]:
    bad = corrupted_nodes(trace)
    out: List[DeliveryViolation] = []
    for r in trace:
        if r["kind"] != "deliver":
            continue
        p = r["payload"]
        lag = r["t"] - p["sent"]
        if lag < 0:
            out.append(DeliveryViolation(p["mid"], p["sent"], r["t"], "delivered before sent"))
        elif lag > config.preGstCap:
            out.append(DeliveryViolation(p["mid"], p["sent"], r["t"], "exceeds preGstCap"))
        elif (p["sent"] >= config.gst and lag > config.delta and p["from"] not in bad and r["node"] not in bad):
            out.append(DeliveryViolation(p["mid"], p["sent"], r["t"], "exceeds delta after GST"))
    return out


def timer_starts(trace: Trace, tag: str, height: int = 1) -> Dict[int, Set[int]]:
    """round -> set of deltas used for timers with this tag."""
    out: Dict[int, Set[int]] = {}
    for r in trace:
        if r["kind"] == "time_start" and r["payload"]["tag"] == tag and r["height"] == height:
            out.setdefault(r["round"], set()).add(r["payload"]["delta"])
    return out


# ---------------------------------------------------------------------------
# per-node vote consistency


@dataclass(frozen=True)
class VoteConflict:
    node: int
    height: int
    round: int
    kind: str
    values: Tuple[Optional[str], ...]


def check_vote_consistency(trace: Trace, kinds: Tuple[str, ...] = ("precommit",)) -> List[VoteConflict]:
    """Honest nodes cast at most one vote of each kind per (height, round),
    across crashes and restarts."""
    bad = corrupted_nodes(trace)
    seen: Dict[Tuple[int, int, int, str], Optional[str]] = {}
    out: List[VoteConflict] = []
    for r in trace:
        if r["kind"] not in kinds or r["node"] in bad:
            continue
        key = (r["node"], r["height"], r["round"], r["kind"])
        value = r["payload"]["value"]
        if key in seen and seen[key] != value:
            out.append(VoteConflict(r["node"], r["height"], r["round"], r["kind"], (seen[key], value)))
        seen.setdefault(key, value)
    return out


def check_decision_quorums(trace: Trace, config: ScenarioConfig) -> List[Tuple[int, int]]:
    """(node, height) pairs whose decide record is not preceded by 2f+1 matching
    decision votes delivered to that node, directly or inside a certificate."""
    bad_nodes = corrupted_nodes(trace)
    q = 2 * config.f_eff + 1
    commit_kind = "COMMIT" if config.commitScheme == "explicit_commit_votes" else "PRECOMMIT"
    # (node, h, round-or-None, value) -> senders
    seen: Dict[Tuple[int, int, Optional[int], Optional[str]], Set[int]] = {}
    out: List[Tuple[int, int]] = []

    def key(node: int, h: int, r: int, value: Optional[str]):
        return (node, h, None if commit_kind == "COMMIT" else r, value)

    for rec in trace:
        node = rec["node"]
        if node in bad_nodes:
            continue
        if rec["kind"] == "deliver":
            m = rec["payload"]["msg"]
            if m["kind"] == commit_kind:
                seen.setdefault(key(node, m["h"], m["r"], m["value"]), set()).add(m["from"])
            elif m["kind"] == "NEWHEIGHT":
                for kind, rnd, sender in m.get("proof", []):
                    if kind == commit_kind:
                        seen.setdefault(key(node, m["h"], rnd, m["value"]), set()).add(sender)
        elif rec["kind"] == "decide":
            p = rec["payload"]
            senders = seen.get(key(node, rec["height"], p["decisionRound"], p["blockId"]), set())
            if len(senders) < q:
                out.append((node, rec["height"]))
    return out
