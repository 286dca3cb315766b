"""A hand-driven context for exercising one ValidatorNode in isolation."""

from __future__ import annotations

from typing import Any, Dict, List, Optional, Tuple

from tendersim.core_types import GENESIS_ID, MessageKind, Phase, ProtocolMessage, TimeParams, TxId, make_block
from tendersim.engine import PRECOMMIT_QUORUM, ValidatorNode
from tendersim.services import SignatureService


class FakeCtx:
    def __init__(self, n: int = 4, f: int = 1, params: Optional[TimeParams] = None, sigma: int = 0,
                 commit_scheme: str = PRECOMMIT_QUORUM, proposer=None):
        self.now = 0
        self.n = n
        self.f = f
        self.params = params or TimeParams.standard(10)
        self.commit_scheme = commit_scheme
        self.sig = SignatureService()
        for i in range(n):
            self.sig.keygen(i)
        self.sigma = sigma
        self.sigma_by_phase: Dict[str, int] = {}
        self._proposer = proposer or (lambda h, r: (h + r) % n)
        self.sent: List[Tuple[Optional[int], ProtocolMessage]] = []
        self.timers: Dict[Tuple[str, int, str], int] = {}
        self.records: List[Tuple[str, Any]] = []
        self.sync_flags: Dict[int, int] = {}

    def proposer(self, height: int, round: int) -> int:
        return self._proposer(height, round)

    def workload(self, height: int) -> List[TxId]:
        return [TxId.named(f"tx-{height}-{i}") for i in range(2)]

    def sign(self, node: int, msg: ProtocolMessage) -> ProtocolMessage:
        token = self.sig.sign(node, msg.signing_bytes())
        return ProtocolMessage(msg.kind, msg.height, msg.round, msg.sender, msg.value, msg.valid_round,
                               msg.random_tx_ids, token, msg.block, msg.wildcard)

    def verify(self, msg: ProtocolMessage) -> bool:
        key = self.sig.key_of(msg.sender)
        return key is not None and self.sig.verify(msg.signing_bytes(), msg.sig_token, key) == 1

    def broadcast(self, node: int, msg: ProtocolMessage) -> None:
        self.sent.append((None, msg))

    def send(self, node: int, receiver: int, msg: ProtocolMessage) -> None:
        self.sent.append((receiver, msg))

    def start_timer(self, node, sid, tag, delta, rec) -> None:
        self.timers.setdefault((sid, node, tag), delta)
        self.records.append(("time_start", (tag, delta)))

    def reset_timer(self, node, sid, tag) -> None:
        self.timers.pop((sid, node, tag), None)

    def reset_node_timers(self, node) -> None:
        for k in [k for k in self.timers if k[1] == node]:
            del self.timers[k]

    def sleep(self, node, phase, height, round, is_proposer, rec) -> int:
        return self.sigma_by_phase.get(phase.value, self.sigma)

    def record(self, node, kind, rec, payload=None, note="") -> None:
        self.records.append((kind, payload))

    def sync_round_ok(self, node) -> None:
        self.sync_flags[node] = 1

    def sync_request(self, node) -> int:
        return 0

    def is_corrupted(self, node) -> bool:
        return False

    # helpers for tests

    def kinds(self) -> List[str]:
        return [k for k, _ in self.records]

    def votes(self, kind: MessageKind) -> List[ProtocolMessage]:
        return [m for _, m in self.sent if m.kind == kind]

    def fire(self, node: ValidatorNode, tag: str) -> None:
        key = (node.sid(), node.id, tag)
        assert key in self.timers, f"timer {tag} not running: {sorted(self.timers)}"
        del self.timers[key]
        node.on_timer(node.sid(), tag)

    def vote(self, kind: MessageKind, sender: int, h: int, r: int, value=None, random_ids=()) -> ProtocolMessage:
        return self.sign(sender, ProtocolMessage(kind, h, r, sender, value=value, random_tx_ids=tuple(random_ids)))

    def proposal(self, sender: int, h: int, r: int, block, valid_round: int = -1) -> ProtocolMessage:
        from tendersim.core_types import block_id

        return self.sign(sender, ProtocolMessage(MessageKind.PROPOSAL, h, r, sender, value=block_id(block),
                                                 valid_round=valid_round, block=block))


def honest_block(height: int = 1, proposer: int = 1, txs=None, prev=GENESIS_ID, salt: int = 0):
    txs = txs if txs is not None else [TxId.named(f"tx-{height}-{i}") for i in range(2)]
    return make_block(height, txs, prev, proposer, salt)


def fresh_node(ctx: FakeCtx, index: int = 0, **kw) -> ValidatorNode:
    node = ValidatorNode(index, ctx, salt=index + 1, genesis=GENESIS_ID, **kw)
    node.start()
    return node


__all__ = ["FakeCtx", "honest_block", "fresh_node", "Phase"]
