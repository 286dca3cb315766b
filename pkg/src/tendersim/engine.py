"""Per-validator consensus state machine.

A ValidatorNode reacts to three stimuli delivered by the harness: protocol
messages, timer expiries and round-synchronisation releases. All side effects
(broadcasts, timers, adversary Sleep/Wake queries, trace records) go through the
context object the harness injects, so a node never touches another node's state.

Each phase follows the same pattern: on its trigger the node asks the adversary
for a delay sigma. If deltaExec + sigma exceeds the round timeout the phase takes
its timeout exit at once (the propose phase instead sits out its timeout and
abandons the round). Otherwise a sigma timer runs, the action executes under a
deltaExec watchdog timer, and the node moves to the next phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Set, Tuple

from .core_types import (
    VOTE_KINDS,
    BlockId,
    BlockValue,
    ConsensusState,
    DecisionConflict,
    MessageKind,
    Phase,
    ProtocolMessage,
    TimeParams,
    TxId,
    advance_threshold,
    block_id,
    execute,
    fmt_id,
    make_block,
    quorum_size,
    random_transactions,
    structurally_valid,
)
from .wal import EnterPrecommit, WalState, outcome_name, proposal_entry, reply_wal, wal_append

PRECOMMIT_QUORUM = "precommit_quorum"
EXPLICIT_COMMIT_VOTES = "explicit_commit_votes"
COMMIT_SCHEMES = (PRECOMMIT_QUORUM, EXPLICIT_COMMIT_VOTES)


def timeout_for(phase: Phase | str, round: int, params: TimeParams) -> int:
    """Round-r timeout; the same linear schedule is used for every phase."""
    if round < 0:
        raise ValueError("round must be >= 0")
    return params.tau_init + round * params.tau_step


class Context(Protocol):
    now: int
    params: TimeParams
    n: int
    f: int
    commit_scheme: str

    def proposer(self, height: int, round: int) -> int: ...
    def workload(self, height: int) -> List[TxId]: ...
    def sign(self, node: int, msg: ProtocolMessage) -> ProtocolMessage: ...
    def verify(self, msg: ProtocolMessage) -> bool: ...
    def broadcast(self, node: int, msg: ProtocolMessage) -> None: ...
    def send(self, node: int, receiver: int, msg: ProtocolMessage) -> None: ...
    def start_timer(self, node: int, sid: str, tag: str, delta: int, rec: Dict[str, Any]) -> None: ...
    def reset_timer(self, node: int, sid: str, tag: str) -> None: ...
    def reset_node_timers(self, node: int) -> None: ...
    def sleep(self, node: int, phase: Phase, height: int, round: int, is_proposer: bool, rec: Dict[str, Any]) -> int: ...
    def record(self, node: int, kind: str, rec: Dict[str, Any], payload: Any = None, note: str = "") -> None: ...
    def sync_round_ok(self, node: int) -> None: ...
    def sync_request(self, node: int) -> int: ...
    def is_corrupted(self, node: int) -> bool: ...


# ---------------------------------------------------------------------------
# vote bookkeeping


class VoteBook:
    """Votes keyed by (height, round, kind, value, sender), one count per key."""

    def __init__(self) -> None:
        self.by_value: Dict[Tuple[int, int, MessageKind, Optional[BlockId]], Dict[int, ProtocolMessage]] = {}
        self.first: Dict[Tuple[int, int, MessageKind, int], Optional[BlockId]] = {}
        self.senders: Dict[Tuple[int, int, MessageKind], Set[int]] = {}

    def add(self, msg: ProtocolMessage) -> str:
        """Returns 'new', 'duplicate' or 'equivocation'."""
        vkey = (msg.height, msg.round, msg.kind, msg.value)
        bucket = self.by_value.setdefault(vkey, {})
        if msg.sender in bucket:
            return "duplicate"
        bucket[msg.sender] = msg
        self.senders.setdefault((msg.height, msg.round, msg.kind), set()).add(msg.sender)
        fkey = (msg.height, msg.round, msg.kind, msg.sender)
        if fkey in self.first:
            return "equivocation" if self.first[fkey] != msg.value else "duplicate"
        self.first[fkey] = msg.value
        return "new"

    def count(self, h: int, r: int, kind: MessageKind, value: Optional[BlockId]) -> int:
        return len(self.by_value.get((h, r, kind, value), ()))

    def any_count(self, h: int, r: int, kind: MessageKind) -> int:
        return len(self.senders.get((h, r, kind), ()))

    def quorum_value(self, h: int, r: int, kind: MessageKind, q: int) -> Optional[BlockId]:
        for (hh, rr, kk, value), bucket in self.by_value.items():
            if hh == h and rr == r and kk == kind and value is not None and len(bucket) >= q:
                return value
        return None

    def messages(self, h: int, r: int, kind: MessageKind, value: Optional[BlockId]) -> List[ProtocolMessage]:
        bucket = self.by_value.get((h, r, kind, value), {})
        return [bucket[s] for s in sorted(bucket)]

    def across_rounds(self, h: int, kind: MessageKind, value: BlockId) -> List[ProtocolMessage]:
        """One message per sender for (h, kind, value), lowest round first."""
        out: Dict[int, ProtocolMessage] = {}
        for (hh, rr, kk, vv) in sorted(self.by_value, key=lambda k: (k[0], k[1], k[2].value, k[3] or -1)):
            if hh == h and kk == kind and vv == value:
                for s, m in self.by_value[(hh, rr, kk, vv)].items():
                    out.setdefault(s, m)
        return [out[s] for s in sorted(out)]

    def rounds_with(self, h: int, kind: MessageKind, value: BlockId) -> List[int]:
        return sorted({rr for (hh, rr, kk, vv) in self.by_value if hh == h and kk == kind and vv == value})

    def drop_height(self, h: int) -> None:
        self.by_value = {k: v for k, v in self.by_value.items() if k[0] > h}
        self.first = {k: v for k, v in self.first.items() if k[0] > h}
        self.senders = {k: v for k, v in self.senders.items() if k[0] > h}


@dataclass
class PoLC:
    records: Dict[Tuple[int, int, BlockId], Set[int]] = field(default_factory=dict)

    def lock(self, h: int, r: int, b: BlockId, v: int) -> None:
        self.records.setdefault((h, r, b), set()).add(v)

    def unlock(self, h: int, r: int, b: BlockId, v: int) -> None:
        self.records.get((h, r, b), set()).discard(v)

    def reset(self) -> None:
        self.records = {}


# ---------------------------------------------------------------------------
# the node


class ValidatorNode:
    def __init__(self, index: int, ctx: Context, salt: int = 0, wal: Optional[WalState] = None,
                 decisions: Optional[Dict[int, BlockValue]] = None, chain_tip: Optional[BlockId] = None,
                 genesis: BlockId = 0, corrupted: bool = False):
        self.id = index
        self.ctx = ctx
        self.salt = salt
        self.corrupted = corrupted
        self.cs = ConsensusState()
        self.polc = PoLC()
        self.wal = wal if wal is not None else WalState()
        self.chain_tip = genesis if chain_tip is None else chain_tip
        if decisions:
            self.cs.decisions = dict(decisions)
            self.cs.height = max(decisions) + 1
        self.votes = VoteBook()
        self.proposals: Dict[Tuple[int, int], ProtocolMessage] = {}
        self.blocks: Dict[BlockId, BlockValue] = {}
        self.future: List[Tuple[int, ProtocolMessage]] = []
        self.evicted: Set[int] = set()
        self.removed_txs: Set[int] = set()
        self.random_reporters: Dict[int, Set[int]] = {}
        self.certificates: Dict[int, ProtocolMessage] = {}
        self.cert_replies: Set[Tuple[int, int, int]] = set()
        self.next_round_senders: Dict[int, Set[int]] = {}
        self.commit_sent: Set[int] = set()
        self.delta_exec = ctx.params.delta_exec
        self.waiting_sync = False
        self.started = False
        self._reset_round_flags()

    # -- helpers ------------------------------------------------------------

    @property
    def q(self) -> int:
        return quorum_size(self.ctx.f)

    @property
    def h(self) -> int:
        return self.cs.height

    @property
    def r(self) -> int:
        return self.cs.round

    def _reset_round_flags(self) -> None:
        self.sleeping = False
        self.busy: Optional[str] = None
        self.pending: Any = None
        self.prevoted = False
        self.precommitted = False
        self.prevote_timeout = False
        self.grace_started = False
        self.exiting = False

    def where(self) -> Dict[str, Any]:
        return {"height": self.h, "round": self.r, "phase": self.cs.phase.value}

    def rec(self, kind: str, payload: Any = None, note: str = "") -> None:
        self.ctx.record(self.id, kind, self.where(), payload, note)

    def sid(self) -> str:
        return f"{self.h}/{self.r}"

    def tau(self) -> int:
        return timeout_for(self.cs.phase, self.r, self.ctx.params)

    def timer(self, tag: str, delta: int) -> None:
        self.ctx.start_timer(self.id, self.sid(), tag, delta, self.where())

    def cancel(self, tag: str) -> None:
        self.ctx.reset_timer(self.id, self.sid(), tag)

    def decided(self, h: Optional[int] = None) -> bool:
        return (self.h if h is None else h) in self.cs.decisions

    def vote_kind_for_decision(self) -> MessageKind:
        return MessageKind.COMMIT if self.ctx.commit_scheme == EXPLICIT_COMMIT_VOTES else MessageKind.PRECOMMIT

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        self.started = True
        self.rec("new_height")
        self.start_round(0)

    def restart(self) -> None:
        """Resume after a crash from durable state (decisions and WAL) only."""
        self.started = True
        outcome = reply_wal(self.wal, self.h - 1)
        payload: Dict[str, Any] = {"outcome": outcome_name(outcome)}
        start_round = 0
        if isinstance(outcome, EnterPrecommit) and outcome.height == self.h:
            start_round = outcome.proposal.round
            payload["proposalRound"] = start_round
        self.rec("restart", payload)
        # announce where we are so peers that already decided can hand over
        # their certificate; lost replies from before the crash are not resent
        status = self.ctx.sign(self.id, ProtocolMessage(MessageKind.NEWROUND, self.h, start_round, self.id))
        self.ctx.broadcast(self.id, status)
        self.start_round(start_round, replay=outcome)

    def start_round(self, r: int, replay: Any = None) -> None:
        if self.waiting_sync:
            return
        self.ctx.reset_node_timers(self.id)
        self.cs.round = r
        self.cs.phase = Phase.PROPOSE
        self._reset_round_flags()
        self.cs.count_phase = {"prevote": 0, "precommit": 0}
        self.rec("new_round")

        outcome = replay if replay is not None else reply_wal(self.wal, self.h - 1)
        if replay is None:
            self.rec("wal", {"outcome": outcome_name(outcome)})
        if (isinstance(outcome, EnterPrecommit) and outcome.height == self.h
                and outcome.proposal.round == r and replay is not None):
            self._resume_from_wal(outcome)
            return

        self.timer("propose/timeout", timeout_for(Phase.PROPOSE, r, self.ctx.params))
        is_proposer = self.ctx.proposer(self.h, r) == self.id
        sigma = self.ctx.sleep(self.id, Phase.PROPOSE, self.h, r, is_proposer, self.where())
        if self.delta_exec_guard() + sigma > self.tau():
            self.sleeping = True
            self.rec("abandon", {"sigma": sigma})
            return
        if sigma > 0:
            self.busy = "propose"
            self.timer("propose/sigma", sigma)
        else:
            self.do_propose()
        self.progress()

    def delta_exec_guard(self) -> int:
        return self.ctx.params.delta_exec

    def _resume_from_wal(self, outcome: EnterPrecommit) -> None:
        p = outcome.proposal
        self.blocks[block_id(p.block)] = p.block
        self.cs.phase = Phase.PRECOMMIT
        self.prevoted = True
        msg = self.ctx.sign(self.id, ProtocolMessage(MessageKind.PREVOTE, self.h, self.r, self.id, value=block_id(p.block)))
        self.rec("prevote", {"value": fmt_id(msg.value), "reason": "wal_replay"})
        self.ctx.broadcast(self.id, msg)
        self.progress()

    def leave_abandoned_round(self) -> None:
        # The round is given up, but peers still waiting in it must not be left
        # short of votes: the node times out of both voting phases on the way out.
        self.sleeping = False
        self.cs.phase = Phase.PREVOTE
        self.cast_prevote(self.fallback_prevote(), reason="abandon")
        self.cast_precommit(None, reason="abandon")
        self.start_round(self.r + 1)

    def do_propose(self) -> None:
        self.busy = None
        self.timer("propose/delta", self.delta_exec)
        if self.ctx.proposer(self.h, self.r) == self.id:
            if self.cs.valid_value is not None:
                v, vr = self.cs.valid_value, self.cs.valid_round
            else:
                v, vr = self.build_block(), -1
            self.blocks[block_id(v)] = v
            msg = self.ctx.sign(self.id, ProtocolMessage(
                MessageKind.PROPOSAL, self.h, self.r, self.id, value=block_id(v), valid_round=vr, block=v))
            self.rec("proposal", {"value": fmt_id(msg.value), "validRound": vr, "txs": len(v.transactions)})
            self.ctx.broadcast(self.id, msg)
        self.cancel("propose/delta")
        self.cs.phase = Phase.PREVOTE

    def build_block(self) -> BlockValue:
        txs = [t for t in self.ctx.workload(self.h) if t.id not in self.removed_txs]
        return make_block(self.h, txs, self.chain_tip, self.id, self.salt)

    # -- timers -------------------------------------------------------------

    def on_timer(self, sid: str, tag: str) -> None:
        if sid != self.sid() or self.waiting_sync:
            return
        if tag == "propose/timeout":
            if self.sleeping:
                self.leave_abandoned_round()
            elif not self.prevoted and self.busy != "prevote" and not self.grace_started:
                self.grace_started = True
                self.timer("propose/grace", self.ctx.params.delta)
        elif tag == "propose/grace":
            if not self.prevoted and self.busy != "prevote":
                if self.busy == "propose":
                    self.busy = None
                self.cs.phase = Phase.PREVOTE
                self.cast_prevote(self.fallback_prevote(), reason="timeout")
        elif tag == "propose/sigma":
            if self.busy == "propose":
                self.do_propose()
        elif tag == "prevote/sigma":
            if self.busy == "prevote":
                self.evaluate_prevote()
        elif tag == "prevote/timeout":
            if self.cs.phase == Phase.PRECOMMIT and not self.precommitted and self.busy is None:
                self.cast_precommit(None, reason="timeout")
        elif tag == "precommit/sigma":
            if self.busy == "precommit":
                self.finish_precommit()
        elif tag == "commit/sigma":
            if self.busy == "commit":
                self.busy = None
                self.timer("precommit/timeout", self.tau())
        elif tag == "precommit/timeout":
            if not self.decided():
                self.start_round(self.r + 1)
            return
        self.progress()

    # -- message intake -----------------------------------------------------

    def on_message(self, auth_sender: int, msg: ProtocolMessage) -> None:
        if not self.started:
            return
        if auth_sender in self.evicted:
            self.rec("drop", {"from": auth_sender, "reason": "evicted"})
            return
        if msg.kind == MessageKind.NEWHEIGHT:
            self.on_certificate(auth_sender, msg)
            return
        if not self.ctx.verify(msg):
            self.evict(auth_sender, "sig", msg)
            return
        if msg.sender != auth_sender:
            self.evict(auth_sender, "auth", msg)
            return
        if msg.kind == MessageKind.PROPOSAL and self.ctx.proposer(msg.height, msg.round) != auth_sender:
            self.evict(auth_sender, "auth", msg)
            return
        if msg.height < self.h or (msg.height == self.h and self.decided()):
            self.rec("drop", {"from": auth_sender, "reason": "stale", "msg": msg.summary()})
            self.reply_certificate(auth_sender, msg)
            return
        if msg.height > self.h:
            self.future.append((auth_sender, msg))
            return
        if msg.kind == MessageKind.NEWROUND:
            return
        self.accept(msg)
        self.progress()

    def evict(self, sender: int, reason: str, msg: ProtocolMessage) -> None:
        if sender not in self.evicted:
            self.evicted.add(sender)
            self.rec("evict", {"node": sender, "check": reason, "msg": msg.summary()})
        if (msg.kind == MessageKind.PROPOSAL and msg.height == self.h and msg.round == self.r
                and self.ctx.proposer(self.h, self.r) == sender and not self.prevoted and not self.decided()):
            self.start_round(self.r + 1)

    def accept(self, msg: ProtocolMessage, relayed: bool = False) -> None:
        if msg.kind == MessageKind.PROPOSAL:
            key = (msg.height, msg.round)
            prior = self.proposals.get(key)
            if prior is None:
                self.proposals[key] = msg
                if msg.block is not None and block_id(msg.block) == msg.value:
                    self.blocks[msg.value] = msg.block
            elif prior.value != msg.value:
                self.rec("equivocation", {"node": msg.sender, "kind": "PROPOSAL", "round": msg.round})
        elif msg.kind in VOTE_KINDS:
            status = self.votes.add(msg)
            if status == "equivocation":
                self.rec("equivocation", {"node": msg.sender, "kind": msg.kind.value, "round": msg.round})
            if status == "duplicate":
                return
            if msg.kind == MessageKind.PREVOTE and msg.value is None and msg.random_tx_ids:
                self.on_prevote_nil_random(msg)
            if msg.value is not None:
                self.on_vote_for_value(msg)
        if not relayed and msg.round > self.r:
            self.on_higher_round_message(msg)

    def on_higher_round_message(self, msg: ProtocolMessage) -> None:
        senders = self.next_round_senders.setdefault(msg.round, set())
        senders.add(msg.sender)
        self.cs.count_next_round[msg.round] = len(senders)
        if len(senders) >= advance_threshold(self.ctx.f) and msg.round > self.r and not self.decided():
            self.rec("round_jump", {"from": self.r, "to": msg.round})
            self.start_round(msg.round)

    def on_prevote_nil_random(self, msg: ProtocolMessage) -> None:
        for tx in msg.random_tx_ids:
            if tx in self.removed_txs:
                continue
            reporters = self.random_reporters.setdefault(tx, set())
            reporters.add(msg.sender)
            self.cs.count_random[tx] = len(reporters)
            if len(reporters) >= self.ctx.f + 1:
                self.removed_txs.add(tx)
                self.rec("remove_tx", {"tx": fmt_id(tx), "reporters": sorted(reporters)})
                reporters.clear()
                self.cs.count_random[tx] = 0

    def on_vote_for_value(self, msg: ProtocolMessage) -> None:
        h, r, v = msg.height, msg.round, msg.value
        if msg.kind == MessageKind.PRECOMMIT and self.votes.count(h, r, msg.kind, v) >= self.q:
            if self.ctx.commit_scheme == EXPLICIT_COMMIT_VOTES:
                self.send_commit_vote(h, r, v)
            else:
                self.try_decide(v, r)
        elif msg.kind == MessageKind.COMMIT and self.ctx.commit_scheme == EXPLICIT_COMMIT_VOTES:
            # commit votes state "a precommit quorum for v exists"; they count
            # across rounds since such quorums can only ever name one value
            if len(self.votes.across_rounds(h, msg.kind, v)) >= self.q:
                self.try_decide(v, r)

    def send_commit_vote(self, h: int, r: int, v: BlockId) -> None:
        if h in self.commit_sent or v not in self.blocks:
            return
        self.commit_sent.add(h)
        msg = self.ctx.sign(self.id, ProtocolMessage(MessageKind.COMMIT, h, r, self.id, value=v))
        self.rec("commit_vote", {"value": fmt_id(v), "round": r})
        self.ctx.broadcast(self.id, msg)

    # -- progress -----------------------------------------------------------

    def progress(self) -> None:
        if self.waiting_sync or not self.started:
            return
        self.check_pending_decisions()
        if self.waiting_sync:
            return
        h, r, q = self.h, self.r, self.q
        pv = MessageKind.PREVOTE
        qv = self.votes.quorum_value(h, r, pv, q)
        if qv is not None and qv in self.blocks and r > self.cs.valid_round and self.cs.phase != Phase.PROPOSE:
            self.cs.set_valid(self.blocks[qv], r)
        self.cs.count_phase["prevote"] = self.votes.any_count(h, r, pv)
        self.cs.count_phase["precommit"] = self.votes.any_count(h, r, MessageKind.PRECOMMIT)

        if self.sleeping or self.busy is not None:
            return
        phase = self.cs.phase
        if phase == Phase.PREVOTE and not self.prevoted:
            if (h, r) in self.proposals:
                self.begin_prevote()
        elif phase == Phase.PRECOMMIT and not self.precommitted:
            if qv is not None and qv in self.blocks:
                self.begin_precommit(qv, nil_quorum=False)
            elif self.votes.count(h, r, pv, None) >= q:
                self.begin_precommit(None, nil_quorum=True)
            elif self.votes.any_count(h, r, pv) >= q and not self.prevote_timeout:
                self.prevote_timeout = True
                self.timer("prevote/timeout", self.tau())
        elif phase == Phase.COMMIT and not self.exiting:
            if self.votes.any_count(h, r, MessageKind.PRECOMMIT) >= q:
                self.begin_commit_exit()

    def check_pending_decisions(self) -> None:
        kind = self.vote_kind_for_decision()
        if kind == MessageKind.COMMIT:
            for v in {k[3] for k in self.votes.by_value if k[0] == self.h and k[2] == kind and k[3] is not None}:
                if len(self.votes.across_rounds(self.h, kind, v)) >= self.q:
                    self.try_decide(v, self.r)
                    if self.waiting_sync:
                        return
        for (hh, rr, kk, v), bucket in list(self.votes.by_value.items()):
            if hh != self.h or v is None or len(bucket) < self.q:
                continue
            if kk == MessageKind.PRECOMMIT and kind == MessageKind.COMMIT:
                self.send_commit_vote(hh, rr, v)
            elif kk == kind and kind == MessageKind.PRECOMMIT:
                self.try_decide(v, rr)
                if self.waiting_sync:
                    return

    # -- prevote ------------------------------------------------------------

    def begin_prevote(self) -> None:
        sigma = self.ctx.sleep(self.id, Phase.PREVOTE, self.h, self.r, False, self.where())
        if self.delta_exec_guard() + sigma > self.tau():
            self.cast_prevote(self.fallback_prevote(), reason="sleep")
        elif sigma > 0:
            self.busy = "prevote"
            self.timer("prevote/sigma", sigma)
        else:
            self.evaluate_prevote()

    def fallback_prevote(self) -> Optional[BlockId]:
        # A locked validator never prevotes nil: it repeats its lock. Without
        # this, nil quorums built from locked validators could unlock a decided
        # value.
        if self.cs.locked_value is not None:
            return block_id(self.cs.locked_value)
        return None

    def evaluate_prevote(self) -> None:
        self.busy = None
        self.timer("prevote/delta", self.delta_exec)
        msg = self.proposals[(self.h, self.r)]
        v = msg.block
        value: Optional[BlockId]
        random_ids: Tuple[int, ...] = ()
        reason = "accept"
        if v is None or block_id(v) != msg.value:
            value, reason = self.fallback_prevote(), "malformed"
        else:
            vid = block_id(v)
            lock_ok = self.cs.locked_round == -1 or block_id(self.cs.locked_value) == vid
            vr = msg.valid_round
            if 0 <= vr < self.r and self.votes.count(self.h, vr, MessageKind.PREVOTE, vid) >= self.q:
                lock_ok = lock_ok or self.cs.locked_round <= vr
            if not lock_ok:
                value, reason = self.fallback_prevote(), "locked"
            elif not structurally_valid(v, self.chain_tip, self.h):
                value, reason = self.fallback_prevote(), "invalid"
            elif execute(v.transactions, self.salt) != v.read_write_hash:
                random_ids = tuple(t.id for t in random_transactions(v.transactions))
                value, reason = None, "exec_mismatch"
                if self.cs.locked_value is not None:
                    value, random_ids = self.fallback_prevote(), ()
            else:
                value = vid
                wal_append(self.wal, proposal_entry(self.h, self.r, vr, v))
        self.cancel("prevote/delta")
        self.cast_prevote(value, reason=reason, random_ids=random_ids)

    def cast_prevote(self, value: Optional[BlockId], reason: str, random_ids: Tuple[int, ...] = ()) -> None:
        self.prevoted = True
        msg = self.ctx.sign(self.id, ProtocolMessage(
            MessageKind.PREVOTE, self.h, self.r, self.id, value=value, random_tx_ids=random_ids))
        payload: Dict[str, Any] = {"value": fmt_id(value), "reason": reason}
        if random_ids:
            payload["randomTx"] = [fmt_id(t) for t in random_ids]
        self.rec("prevote", payload)
        self.cs.phase = Phase.PRECOMMIT
        self.ctx.broadcast(self.id, msg)

    # -- precommit ----------------------------------------------------------

    def begin_precommit(self, value: Optional[BlockId], nil_quorum: bool) -> None:
        sigma = self.ctx.sleep(self.id, Phase.PRECOMMIT, self.h, self.r, False, self.where())
        if self.delta_exec_guard() + sigma > self.tau():
            self.cast_precommit(None, reason="sleep")
            return
        self.pending = (value, nil_quorum)
        if sigma > 0:
            self.busy = "precommit"
            self.timer("precommit/sigma", sigma)
        else:
            self.finish_precommit()

    def finish_precommit(self) -> None:
        self.busy = None
        value, nil_quorum = self.pending
        self.pending = None
        self.timer("precommit/delta", self.delta_exec)
        if value is not None:
            v = self.blocks[value]
            self.cs.lock(v, self.r)
            self.cs.set_valid(v, self.r)
            self.polc.lock(self.h, self.r, value, self.id)
            self.rec("lock", {"value": fmt_id(value)})
            self.cancel("precommit/delta")
            self.cast_precommit(value, reason="quorum")
        elif nil_quorum:
            had = self.cs.locked_value
            self.cs.unlock()
            self.polc.reset()
            self.rec("unlock", {"scope": "ALL", "had": fmt_id(block_id(had)) if had else None})
            self.cancel("precommit/delta")
            self.cast_precommit(None, reason="nil_quorum")
        else:
            self.cancel("precommit/delta")
            self.cast_precommit(None, reason="timeout")

    def cast_precommit(self, value: Optional[BlockId], reason: str) -> None:
        self.precommitted = True
        msg = self.ctx.sign(self.id, ProtocolMessage(MessageKind.PRECOMMIT, self.h, self.r, self.id, value=value))
        self.rec("precommit", {"value": fmt_id(value), "reason": reason})
        self.cs.phase = Phase.COMMIT
        self.ctx.broadcast(self.id, msg)

    # -- commit / decision --------------------------------------------------

    def begin_commit_exit(self) -> None:
        self.exiting = True
        sigma = self.ctx.sleep(self.id, Phase.COMMIT, self.h, self.r, False, self.where())
        if self.delta_exec_guard() + sigma > self.tau():
            self.delta_exec = self.delta_exec + (self.r + 1) * self.ctx.params.delta
            self.rec("escalate", {"deltaExec": self.delta_exec})
            self.start_round(self.r + 1)
        elif sigma > 0:
            self.busy = "commit"
            self.timer("commit/sigma", sigma)
        else:
            self.timer("precommit/timeout", self.tau())

    def try_decide(self, value: BlockId, r: int) -> None:
        if value not in self.blocks:
            return
        block = self.blocks[value]
        h = self.h
        try:
            fresh = self.cs.record_decision(h, block)
        except DecisionConflict as exc:
            self.rec("double_decide", {"existing": fmt_id(exc.existing), "attempted": fmt_id(exc.attempted)})
            return
        if not fresh:
            return
        self.chain_tip = value
        self.rec("decide", {"blockId": fmt_id(value), "decisionRound": r})
        kind = self.vote_kind_for_decision()
        proof = self.votes.messages(h, r, kind, value) if kind == MessageKind.PRECOMMIT else \
            self.votes.across_rounds(h, kind, value)
        cert = ProtocolMessage(MessageKind.NEWHEIGHT, h, r, self.id, value=value, block=block, wildcard=tuple(proof))
        self.certificates[h] = cert
        self.ctx.broadcast(self.id, cert)
        self.ctx.reset_node_timers(self.id)
        self.waiting_sync = True
        self.ctx.sync_round_ok(self.id)
        self.poll_sync()

    def poll_sync(self) -> None:
        if not self.waiting_sync:
            return
        if self.ctx.sync_request(self.id) == 0:
            self.waiting_sync = False
            self.enter_next_height()

    def on_sync_release(self) -> None:
        self.poll_sync()

    def enter_next_height(self) -> None:
        old = self.h
        self.cs.height = old + 1
        self.cs.reset_height()
        self.polc.reset()
        self.delta_exec = self.ctx.params.delta_exec
        self.votes.drop_height(old)
        self.next_round_senders = {}
        self.random_reporters = {}
        self.proposals = {k: v for k, v in self.proposals.items() if k[0] > old}
        self.rec("new_height")
        self.start_round(0)
        buffered = [(s, m) for s, m in self.future if m.height == self.h]
        self.future = [(s, m) for s, m in self.future if m.height > self.h]
        for sender, msg in buffered:
            if self.h != msg.height or self.waiting_sync:
                self.future.append((sender, msg))
                continue
            self.accept(msg)
        self.progress()

    def on_certificate(self, auth_sender: int, msg: ProtocolMessage) -> None:
        if msg.height > self.h:
            self.future.append((auth_sender, msg))
            return
        if msg.height < self.h or self.decided(msg.height):
            return
        block = msg.block
        votes = msg.wildcard or ()
        kind = self.vote_kind_for_decision()
        if block is None or block_id(block) != msg.value:
            self.evict(auth_sender, "cert", msg)
            return
        signers = set()
        for vote in votes:
            if not isinstance(vote, ProtocolMessage):
                self.evict(auth_sender, "cert", msg)
                return
            same_round = vote.round == msg.round or kind == MessageKind.COMMIT
            if vote.kind != kind or vote.height != msg.height or not same_round or vote.value != msg.value or not self.ctx.verify(vote):
                self.evict(auth_sender, "cert", msg)
                return
            signers.add(vote.sender)
        if len(signers) < self.q:
            self.evict(auth_sender, "cert", msg)
            return
        self.blocks[msg.value] = block
        for vote in votes:
            self.accept(vote, relayed=True)
        self.progress()

    def reply_certificate(self, requester: int, msg: ProtocolMessage) -> None:
        cert = self.certificates.get(msg.height)
        key = (msg.height, requester, msg.round)
        if cert is None or requester == self.id:
            return
        if key in self.cert_replies and msg.kind != MessageKind.NEWROUND:
            return
        self.cert_replies.add(key)
        self.ctx.send(self.id, requester, cert)
