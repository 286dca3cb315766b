"""Deterministic discrete-event harness.

Time advances in integer ticks. At each tick the logical timer is decremented
once and its expiries are queued, then every event stamped with the current
tick is handled in (time, seq) order, including events queued during the tick
with zero delay. Seeds drive a single random.Random, so a (config, seed) pair
always yields the same trace bytes.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .adversary import Adversary, ByzantineDriver, DelayPlan
from .core_types import (
    GENESIS_ID,
    BlockValue,
    MessageKind,
    Phase,
    ProtocolMessage,
    TxId,
    ValidatorSet,
    block_id,
)
from .config import ScenarioConfig
from .engine import ValidatorNode
from .proposer import ProposerSchedule
from .services import AuthService, SignatureService, SyncService, bc_broadcast
from .timer import LogicalTimer
from .wal import WalState

# record kinds that stay visible for corrupted nodes; everything else a shadow
# engine does is private to the adversary
PUBLIC_KINDS = {"send", "deliver", "leak", "corrupt", "drop"}


class HorizonExceeded(Exception):
    def __init__(self, max_ticks: int, trace: List[Dict[str, Any]], decided: Dict[int, Dict[int, str]]):
        super().__init__(f"no complete decision set within {max_ticks} ticks")
        self.max_ticks = max_ticks
        self.trace = trace
        self.decided = decided


@dataclass
class NetworkModel:
    delta: int
    gst: int
    pre_gst_cap: int
    rng: random.Random
    delay_plan: DelayPlan = field(default_factory=DelayPlan)
    pre_gst_delay: Optional[int] = None


def schedule_delivery(mid: int, send_time: int, model: NetworkModel, honest: bool = True, extra: int = 0) -> int:
    """Arrival tick of message `mid` sent at `send_time`.

    After GST an honest copy arrives within delta (plan values are clamped).
    Before GST the delay is the adversary's choice capped at preGstCap, and the
    arrival is pulled in to GST + delta at the latest. `extra` is a delay a
    Byzantine sender adds to its own messages.
    """
    planned = model.delay_plan.get(mid)
    if send_time >= model.gst:
        d = min(planned, model.delta) if planned is not None else model.rng.randint(0, model.delta)
        if not honest:
            d = min(d + extra, model.pre_gst_cap) if extra else d
        return send_time + d
    if planned is not None:
        d = planned
    elif model.pre_gst_delay is not None:
        d = model.pre_gst_delay
    else:
        d = model.rng.randint(0, model.pre_gst_cap)
    d = min(d + (extra if not honest else 0), model.pre_gst_cap)
    return min(send_time + d, max(send_time, model.gst + model.delta))


def default_workload(height: int, per_height: int, random_heights: Iterable[int]) -> List[TxId]:
    txs = [TxId.named(f"tx-{height}-{i}") for i in range(per_height)]
    if height in set(random_heights):
        txs.append(TxId.named(f"rnd-{height}", is_random=True))
    return txs


def encode_record(rec: Dict[str, Any]) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def write_trace(path: Union[str, Path], trace: List[Dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(encode_record(rec))
            fh.write("\n")


def trace_bytes(trace: List[Dict[str, Any]]) -> bytes:
    return "".join(encode_record(r) + "\n" for r in trace).encode("utf-8")


@dataclass
class RunResult:
    trace: List[Dict[str, Any]]
    decisions: Dict[int, Dict[int, str]]
    final_tick: int
    honest: Tuple[int, ...]
    corrupted: Tuple[int, ...]


class Simulation:
    def __init__(self, config: ScenarioConfig, seed: Optional[int] = None):
        config.validate()
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.params = config.time_params()
        self.n = config.n
        self.f = config.f_eff
        self.commit_scheme = config.commitScheme
        self.now = 0
        self.rng = random.Random(self.seed)
        self.validators = ValidatorSet.uniform(self.n, self.f) if config.stakes is None else \
            ValidatorSet(ValidatorSet.uniform(self.n, self.f).members, tuple(config.stakes), self.f)
        self.schedule = ProposerSchedule(self.validators, config.proposerScheme)
        self.network = NetworkModel(config.delta, config.gst, config.preGstCap, self.rng,
                                    config.adversary.delay_plan, config.adversary.pre_gst_delay)
        self.timer = LogicalTimer()
        self.auth = AuthService()
        self.sig = SignatureService()
        self.adversary = Adversary(config.adversary, self.n, self.f, self.params, self.schedule.proposer)
        self.trace: List[Dict[str, Any]] = []
        self.queue: List[Tuple[int, int, str, Any]] = []
        self._seq = 0
        self._rec_seq = 0
        self._mid = 0
        self.down: Dict[int, int] = {}
        self.wals: Dict[int, WalState] = {}
        self.nodes: Dict[int, Any] = {}
        for i in range(self.n):
            self.auth.register(i, self.sig.keygen(i))
        for c in self.adversary.targets:
            self.adversary.corrupt(c)
            self.auth.mark_corrupted(c)
            self.sig.mark_corrupted(c)
        self.corrupted = tuple(sorted(self.adversary.corrupted))
        self.honest = tuple(i for i in range(self.n) if i not in self.adversary.corrupted)
        self.sync = SyncService(range(self.n), self.honest)
        for i in range(self.n):
            if i in self.adversary.corrupted:
                self.nodes[i] = ByzantineDriver(i, self.adversary, self, lambda ctx, i=i: self._make_node(i, ctx))
            else:
                self.wals[i] = WalState(config.walMode)
                self.nodes[i] = self._make_node(i, self, wal=self.wals[i])

    def _make_node(self, i: int, ctx: Any, **kw: Any) -> ValidatorNode:
        return ValidatorNode(i, ctx, salt=i + 1, genesis=GENESIS_ID, corrupted=i in self.adversary.corrupted, **kw)

    # -- context used by nodes ----------------------------------------------

    def proposer(self, height: int, round: int) -> int:
        return self.schedule.proposer(height, round)

    def workload(self, height: int) -> List[TxId]:
        return default_workload(height, self.config.txPerHeight, self.config.randomTxHeights)

    def sign(self, node: int, msg: ProtocolMessage) -> ProtocolMessage:
        token = self.sig.sign(node, msg.signing_bytes())
        return ProtocolMessage(msg.kind, msg.height, msg.round, msg.sender, msg.value, msg.valid_round,
                               msg.random_tx_ids, token, msg.block, msg.wildcard)

    def verify(self, msg: ProtocolMessage) -> bool:
        key = self.sig.key_of(msg.sender)
        if key is None:
            return False
        return self.sig.verify(msg.signing_bytes(), msg.sig_token, key) == 1

    def is_corrupted(self, node: int) -> bool:
        return node in self.adversary.corrupted

    def broadcast(self, node: int, msg: ProtocolMessage) -> None:
        self.emit(node, None, msg, 0)

    def send(self, node: int, receiver: int, msg: ProtocolMessage) -> None:
        self.emit(node, (receiver,), msg, 0)

    def emit(self, sender: int, receivers: Optional[Tuple[int, ...]], msg: ProtocolMessage, extra: int) -> None:
        honest_sender = sender not in self.adversary.corrupted
        if receivers is None:
            fan = bc_broadcast(sender, msg, range(self.n))
            targets = [b.receiver for b in fan if b.receiver is not None]
            self._push(self.now, "observe", (sender, msg))
        else:
            targets = list(receivers)
        mids, arrivals = [], []
        for r in targets:
            self._mid += 1
            mid = self._mid
            if r == sender:
                at = self.now
            else:
                at = schedule_delivery(mid, self.now, self.network, honest_sender, extra)
            delivered = self.auth.send(sender, r, msg)
            self._push(at, "deliver", (delivered.receiver, delivered.sender, delivered.message, mid, self.now))
            mids.append(mid)
            arrivals.append(at)
        where = self._where(sender)
        self._record(sender, "send", where, {"msg": msg.summary(), "to": targets, "mids": mids, "at": arrivals})

    def start_timer(self, node: int, sid: str, tag: str, delta: int, rec: Dict[str, Any]) -> None:
        res = self.timer.time_start((sid, node, tag), delta)
        self._record(node, "time_start", rec, {"tag": tag, "delta": delta, "result": res.value})

    def reset_timer(self, node: int, sid: str, tag: str) -> None:
        self.timer.reset_time((sid, node, tag))

    def reset_node_timers(self, node: int) -> None:
        self.timer.reset_node(node)

    def sleep(self, node: int, phase: Phase, height: int, round: int, is_proposer: bool, rec: Dict[str, Any]) -> int:
        self._record(node, "sleep", rec, {"isProposer": is_proposer})
        sigma = self.adversary.on_sleep(node, phase, height, round, is_proposer)
        self._record(node, "wake", rec, {"sigma": sigma})
        return sigma

    def record(self, node: int, kind: str, rec: Dict[str, Any], payload: Any = None, note: str = "") -> None:
        self._record(node, kind, rec, payload, note)

    def sync_round_ok(self, node: int) -> None:
        sw = self.sync.round_ok(node)
        self._record(node, "sync", self._where(node), {"reset": sw.reset, "generation": self.sync.generation})
        if sw.reset:
            self._push(self.now, "release", None)

    def sync_request(self, node: int) -> int:
        return self.sync.request_round(node)

    # -- internals ----------------------------------------------------------

    def _where(self, node: int) -> Dict[str, Any]:
        n = self.nodes.get(node)
        if n is None:
            return {"height": 0, "round": 0, "phase": "propose"}
        cs = n.cs
        return {"height": cs.height, "round": cs.round, "phase": cs.phase.value}

    def _push(self, at: int, kind: str, data: Any) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (at, self._seq, kind, data))

    def _record(self, node: Optional[int], kind: str, where: Dict[str, Any], payload: Any = None, note: str = "") -> None:
        if node is not None and node in self.adversary.corrupted and kind not in PUBLIC_KINDS:
            return
        self._rec_seq += 1
        self.trace.append({"t": self.now, "seq": self._rec_seq, "node": node, "kind": kind,
                           "height": where["height"], "round": where["round"], "phase": where["phase"],
                           "payload": payload, "note": note})

    def _handle(self, kind: str, data: Any) -> None:
        if kind == "deliver":
            receiver, sender, msg, mid, sent = data
            if receiver in self.down:
                self._record(receiver, "drop", self._where(receiver), {"mid": mid, "reason": "down"})
                return
            self._record(receiver, "deliver", self._where(receiver),
                         {"mid": mid, "from": sender, "sent": sent, "msg": msg.summary()})
            self.nodes[receiver].on_message(sender, msg)
        elif kind == "timer":
            over = data
            node = over.node
            if node in self.down:
                return
            self._record(node, "time_over", self._where(node), {"tag": over.phase, "delta": over.delta})
            self.nodes[node].on_timer(over.sid, over.phase)
        elif kind == "observe":
            sender, msg = data
            self.adversary.observe(sender, msg)
        elif kind == "release":
            for i in self.honest:
                if i not in self.down:
                    self.nodes[i].on_sync_release()
        elif kind == "crash":
            node, downtime = data
            if node in self.down or node in self.adversary.corrupted:
                return
            self._record(node, "crash", self._where(node), {"downtime": downtime})
            self.timer.reset_node(node)
            self.down[node] = self.now + downtime
            self._push(self.now + downtime, "restart", node)
        elif kind == "restart":
            node = data
            self.down.pop(node, None)
            old = self.nodes[node]
            decisions = dict(old.cs.decisions)
            tip = block_id(decisions[max(decisions)]) if decisions else GENESIS_ID
            fresh = self._make_node(node, self, wal=self.wals[node], decisions=decisions, chain_tip=tip)
            self.nodes[node] = fresh
            fresh.restart()

    def decisions(self) -> Dict[int, Dict[int, str]]:
        out: Dict[int, Dict[int, str]] = {}
        for i in self.honest:
            out[i] = {h: f"{block_id(v):016x}" for h, v in sorted(self.nodes[i].cs.decisions.items())}
        return out

    def done(self) -> bool:
        for i in self.honest:
            decided = self.nodes[i].cs.decisions
            if any(h not in decided for h in range(1, self.config.heights + 1)):
                return False
        return True

    def run(self) -> RunResult:
        for c in self.corrupted:
            self._record(c, "corrupt", {"height": 1, "round": 0, "phase": "propose"},
                         {"strategy": self.config.adversary.strategy})
        for crash in sorted(self.config.crashes, key=lambda c: (c.at, c.node)):
            self._push(crash.at, "crash", (crash.node, crash.downtime))
        for i in range(self.n):
            self.nodes[i].start()
        while True:
            # completion is checked per event: with zero-delay self-delivery a
            # lone validator could otherwise chain heights forever within a tick
            finished = self.done()
            while not finished and self.queue and self.queue[0][0] <= self.now:
                _, _, kind, data = heapq.heappop(self.queue)
                self._handle(kind, data)
                finished = self.done()
            if finished:
                break
            if self.now >= self.config.maxTicks:
                raise HorizonExceeded(self.config.maxTicks, self.trace, self.decisions())
            self.now += 1
            for over in self.timer.tick():
                self._push(self.now, "timer", over)
        return RunResult(self.trace, self.decisions(), self.now, self.honest, self.corrupted)


def run(config: ScenarioConfig, seed: Optional[int] = None) -> RunResult:
    return Simulation(config, seed).run()
