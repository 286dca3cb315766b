"""Static-corruption adversary: per-phase delay injection through the
Sleep/Wake hook, per-message network delays, and Byzantine drivers that wrap a
shadow honest engine and rewrite what it emits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

from .core_types import (
    MessageKind,
    Phase,
    ProtocolMessage,
    TimeParams,
    TxId,
    block_id,
    fmt_id,
    fnv1a64,
    enc_u64,
    make_block,
)

HONEST_ALL = "honest_all"
DELAY_PROPOSER = "delay_proposer"
WITHHOLD_VOTES = "withhold_votes"
DELAY_AND_WITHHOLD = "delay_and_withhold"
WORST_CASE = "worst_case_f_rounds"
CUSTOM_SCRIPT = "custom_script"
STRATEGIES = (HONEST_ALL, DELAY_PROPOSER, WITHHOLD_VOTES, DELAY_AND_WITHHOLD, WORST_CASE, CUSTOM_SCRIPT)

ACTIONS = ("withhold", "equivocate", "conflicting_proposal", "forge", "delay")
VOTE_KIND_NAMES = ("PREVOTE", "PRECOMMIT", "COMMIT")


class CorruptionBudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class SigmaRule:
    """sigma for matching (node, phase, round, height); None fields match anything."""

    sigma: int
    node: Optional[int] = None
    phase: Optional[str] = None
    round: Optional[int] = None
    height: Optional[int] = None

    def matches(self, node: int, phase: str, round: int, height: int) -> bool:
        return ((self.node is None or self.node == node) and (self.phase is None or self.phase == phase)
                and (self.round is None or self.round == round) and (self.height is None or self.height == height))


@dataclass(frozen=True)
class ScriptAction:
    node: int
    action: str
    kinds: Tuple[str, ...] = ()
    ticks: int = 0

    def applies_to(self, kind: MessageKind) -> bool:
        return not self.kinds or kind.value in self.kinds


@dataclass
class DelayPlan:
    per_message: Dict[int, int] = field(default_factory=dict)

    def get(self, mid: int) -> Optional[int]:
        return self.per_message.get(mid)


@dataclass
class AdversaryConfig:
    corrupted: Tuple[int, ...] = ()
    strategy: str = HONEST_ALL
    sigma: Optional[int] = None
    rounds: Tuple[int, ...] = (0,)
    sigma_table: Tuple[SigmaRule, ...] = ()
    actions: Tuple[ScriptAction, ...] = ()
    pre_gst_delay: Optional[int] = None
    delay_plan: DelayPlan = field(default_factory=DelayPlan)
    strict: bool = True

    def validate(self, n: int) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        for c in self.corrupted:
            if not 0 <= c < n:
                raise ValueError(f"corrupted node {c} outside 0..{n - 1}")
        if len(set(self.corrupted)) != len(self.corrupted):
            raise ValueError("corrupted list has duplicates")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        for rule in self.sigma_table:
            if rule.sigma < 0:
                raise ValueError("sigma table entries must be >= 0")
        for a in self.actions:
            if a.action not in ACTIONS:
                raise ValueError(f"unknown action {a.action!r}")
        if self.pre_gst_delay is not None and self.pre_gst_delay < 0:
            raise ValueError("preGstDelay must be >= 0")

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> "AdversaryConfig":
        known = {"corrupted", "strategy", "sigma", "rounds", "sigmaTable", "actions", "preGstDelay",
                 "delayPlan", "strict"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown adversary keys {sorted(extra)}")
        rules = tuple(SigmaRule(int(e["sigma"]), e.get("node"), e.get("phase"), e.get("round"), e.get("height"))
                      for e in d.get("sigmaTable", []))
        acts = tuple(ScriptAction(int(a["node"]), a["action"], tuple(a.get("kinds", ())), int(a.get("ticks", 0)))
                     for a in d.get("actions", []))
        plan = DelayPlan({int(k): int(v) for k, v in d.get("delayPlan", {}).items()})
        return cls(
            corrupted=tuple(int(c) for c in d.get("corrupted", [])),
            strategy=d.get("strategy", HONEST_ALL),
            sigma=d.get("sigma"),
            rounds=tuple(d.get("rounds", [0])),
            sigma_table=rules,
            actions=acts,
            pre_gst_delay=d.get("preGstDelay"),
            delay_plan=plan,
            strict=bool(d.get("strict", True)),
        )

    def to_json(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"corrupted": list(self.corrupted), "strategy": self.strategy,
                               "rounds": list(self.rounds), "strict": self.strict}
        if self.sigma is not None:
            out["sigma"] = self.sigma
        if self.sigma_table:
            out["sigmaTable"] = [{k: v for k, v in (("sigma", r.sigma), ("node", r.node), ("phase", r.phase),
                                                    ("round", r.round), ("height", r.height)) if v is not None}
                                 for r in self.sigma_table]
        if self.actions:
            out["actions"] = [{"node": a.node, "action": a.action, "kinds": list(a.kinds), "ticks": a.ticks}
                              for a in self.actions]
        if self.pre_gst_delay is not None:
            out["preGstDelay"] = self.pre_gst_delay
        if self.delay_plan.per_message:
            out["delayPlan"] = {str(k): v for k, v in sorted(self.delay_plan.per_message.items())}
        return out


def kill_sigma(params: TimeParams, round: int) -> int:
    """Smallest sigma that makes deltaExec + sigma exceed the round timeout."""
    return max(0, params.tau(round) - params.delta_exec + 1)


class Adversary:
    """Strategy evaluation. Sees only what the harness hands it: Sleep queries,
    broadcast observations and the outputs of its own corrupted nodes."""

    def __init__(self, config: AdversaryConfig, n: int, f: int, params: TimeParams, proposer_of=None):
        config.validate(n)
        self.config = config
        self.n = n
        self.f = f
        self.params = params
        self.corrupted: Set[int] = set()
        self.observed: List[Tuple[int, ProtocolMessage]] = []
        self.leaks: List[Tuple[int, int, int, int]] = []
        targets = list(config.corrupted)
        if not targets and config.strategy == WORST_CASE and proposer_of is not None:
            for r in range(f):
                p = proposer_of(1, r)
                if p not in targets:
                    targets.append(p)
        self.targets = tuple(targets)

    def corrupt(self, node: int) -> None:
        if not 0 <= node < self.n:
            raise ValueError(f"node {node} not in validator set")
        if node in self.corrupted:
            return
        if self.config.strict and len(self.corrupted) + 1 > self.f:
            raise CorruptionBudgetExceeded(f"corrupting {node} would exceed f={self.f}")
        self.corrupted.add(node)

    # -- Sleep/Wake ---------------------------------------------------------

    def on_sleep(self, node: int, phase: Phase, height: int, round: int, is_proposer: bool) -> int:
        s = self.config.strategy
        ph = phase.value if isinstance(phase, Phase) else str(phase)
        if s == HONEST_ALL or s == WITHHOLD_VOTES:
            return 0
        if s in (DELAY_PROPOSER, DELAY_AND_WITHHOLD):
            if ph == Phase.PROPOSE.value and is_proposer and round in self.config.rounds:
                return self.config.sigma if self.config.sigma is not None else self.params.tau(round)
            return 0
        if s == WORST_CASE:
            # rounds 0..f-1 belong to corrupted proposers that stay silent; round f
            # has an honest proposer and is killed through the delay hook instead
            if ph == Phase.PROPOSE.value and height == 1 and round <= self.f:
                return kill_sigma(self.params, round)
            return 0
        for rule in self.config.sigma_table:
            if rule.matches(node, ph, round, height):
                return rule.sigma
        return 0

    def observe(self, sender: int, msg: ProtocolMessage) -> None:
        self.observed.append((sender, msg))

    # -- Byzantine output rewriting -----------------------------------------

    def actions_for(self, node: int) -> List[ScriptAction]:
        s = self.config.strategy
        if s in (WITHHOLD_VOTES, DELAY_AND_WITHHOLD):
            return [ScriptAction(node, "withhold", VOTE_KIND_NAMES)]
        if s == WORST_CASE:
            return [ScriptAction(node, "withhold")]
        if s == CUSTOM_SCRIPT:
            return [a for a in self.config.actions if a.node == node]
        return []


@dataclass(frozen=True)
class Emission:
    receivers: Optional[Tuple[int, ...]]  # None means every member
    message: ProtocolMessage
    extra_delay: int = 0


class PuppetContext:
    """Context handed to the shadow engine of a corrupted node. Reads pass
    through to the harness; outputs are routed to the adversary."""

    def __init__(self, base: Any, driver: "ByzantineDriver"):
        self._base = base
        self._driver = driver

    def __getattr__(self, name: str) -> Any:
        return getattr(self._base, name)

    def broadcast(self, node: int, msg: ProtocolMessage) -> None:
        self._driver.rewrite(msg, None)

    def send(self, node: int, receiver: int, msg: ProtocolMessage) -> None:
        self._driver.rewrite(msg, (receiver,))

    def sleep(self, node, phase, height, round, is_proposer, rec) -> int:
        return self._driver.adversary.on_sleep(node, phase, height, round, is_proposer)

    def record(self, node, kind, rec, payload=None, note="") -> None:
        return None

    def sync_round_ok(self, node: int) -> None:
        return None

    def sync_request(self, node: int) -> int:
        return 0


class ByzantineDriver:
    """Replaces the honest handler of a corrupted node."""

    def __init__(self, index: int, adversary: Adversary, base_ctx: Any, node_factory):
        self.id = index
        self.adversary = adversary
        self.base = base_ctx
        self.ctx = PuppetContext(base_ctx, self)
        self.shadow = node_factory(self.ctx)
        self.forged = 0

    # node interface used by the harness
    def start(self) -> None:
        self.shadow.start()

    def on_message(self, auth_sender: int, msg: ProtocolMessage) -> None:
        self.shadow.on_message(auth_sender, msg)

    def on_timer(self, sid: str, tag: str) -> None:
        self.shadow.on_timer(sid, tag)

    def on_sync_release(self) -> None:
        return None

    @property
    def cs(self):
        return self.shadow.cs

    def rewrite(self, msg: ProtocolMessage, receivers: Optional[Tuple[int, ...]]) -> None:
        base = self.base
        if msg.kind == MessageKind.PROPOSAL:
            self.adversary.leaks.append((self.id, msg.height, msg.round, msg.value))
            base.record(self.id, "leak", {"height": msg.height, "round": msg.round, "phase": "propose"},
                        {"value": fmt_id(msg.value)}, "corrupted proposer")
        acts = [a for a in self.adversary.actions_for(self.id) if a.applies_to(msg.kind)]
        if any(a.action == "withhold" for a in acts):
            return
        delay = sum(a.ticks for a in acts if a.action == "delay")
        members = tuple(range(base.n)) if receivers is None else receivers
        names = {a.action for a in acts}
        if "conflicting_proposal" in names and msg.kind == MessageKind.PROPOSAL and msg.block is not None:
            alt = self.conflicting_block(msg)
            self.split(members, msg, alt, delay)
        elif "equivocate" in names and msg.kind in (MessageKind.PREVOTE, MessageKind.PRECOMMIT, MessageKind.COMMIT):
            alt_value = None if msg.value is not None else fnv1a64(b"equivocate" + enc_u64(msg.height) + enc_u64(msg.round))
            alt = base.sign(self.id, ProtocolMessage(msg.kind, msg.height, msg.round, self.id, value=alt_value))
            self.split(members, msg, alt, delay)
        else:
            base.emit(self.id, None if receivers is None else receivers, msg, delay)
        if "forge" in names and msg.kind in (MessageKind.PREVOTE, MessageKind.PRECOMMIT):
            self.forge(msg, delay)

    def split(self, members: Sequence[int], a: ProtocolMessage, b: ProtocolMessage, delay: int) -> None:
        first = tuple(m for m in members if m % 2 == 0)
        second = tuple(m for m in members if m % 2 == 1)
        if first:
            self.base.emit(self.id, first, a, delay)
        if second:
            self.base.emit(self.id, second, b, delay)

    def conflicting_block(self, msg: ProtocolMessage) -> ProtocolMessage:
        v = msg.block
        extra = TxId.named(f"byz-{self.id}-{msg.height}-{msg.round}")
        w = make_block(v.height, v.transactions + (extra,), v.prev_block_id, self.id, self.shadow.salt)
        return self.base.sign(self.id, ProtocolMessage(MessageKind.PROPOSAL, msg.height, msg.round, self.id,
                                                       value=block_id(w), valid_round=-1, block=w))

    def forge(self, msg: ProtocolMessage, delay: int) -> None:
        victims = [i for i in range(self.base.n) if i not in self.adversary.corrupted]
        if not victims:
            return
        victim = victims[self.forged % len(victims)]
        self.forged += 1
        fake = ProtocolMessage(msg.kind, msg.height, msg.round, victim, value=msg.value,
                               sig_token=f"forged-{self.id}-{self.forged}")
        self.base.emit(self.id, None, fake, delay)
