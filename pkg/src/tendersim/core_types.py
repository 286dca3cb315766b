"""Shared domain types: validators, blocks, transactions, protocol messages,
per-validator consensus state and the canonical encoding used for ids."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

BlockId = int


class DecisionConflict(Exception):
    """A second, different value was recorded at an already decided height."""

    def __init__(self, height: int, existing: BlockId, attempted: BlockId):
        super().__init__(f"height {height} already decided {existing:#x}, refused {attempted:#x}")
        self.height = height
        self.existing = existing
        self.attempted = attempted


class Phase(str, Enum):
    PROPOSE = "propose"
    PREVOTE = "prevote"
    PRECOMMIT = "precommit"
    COMMIT = "commit"


class MessageKind(str, Enum):
    PROPOSAL = "PROPOSAL"
    PREVOTE = "PREVOTE"
    PRECOMMIT = "PRECOMMIT"
    COMMIT = "COMMIT"
    NEWROUND = "NEWROUND"
    NEWHEIGHT = "NEWHEIGHT"


VOTE_KINDS = (MessageKind.PREVOTE, MessageKind.PRECOMMIT, MessageKind.COMMIT)


# ---------------------------------------------------------------------------
# canonical encoding


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def enc_u8(x: int) -> bytes:
    return struct.pack("<B", x)


def enc_u32(x: int) -> bytes:
    return struct.pack("<I", x)


def enc_u64(x: int) -> bytes:
    return struct.pack("<Q", x & MASK64)


def enc_i64(x: int) -> bytes:
    return struct.pack("<q", x)


def enc_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return enc_u32(len(raw)) + raw


def enc_list(items: Sequence[bytes]) -> bytes:
    return enc_u32(len(items)) + b"".join(items)


class Reader:
    """Cursor over a canonical byte string; raises ValueError on truncation."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, fmt: str) -> int:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ValueError("truncated record")
        (val,) = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return val

    def u8(self) -> int:
        return self._take("<B")

    def u32(self) -> int:
        return self._take("<I")

    def u64(self) -> int:
        return self._take("<Q")

    def i64(self) -> int:
        return self._take("<q")

    def string(self) -> str:
        n = self.u32()
        if self.pos + n > len(self.data):
            raise ValueError("truncated string")
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        return raw.decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.data)


# ---------------------------------------------------------------------------
# validators


@dataclass(frozen=True, order=True)
class ValidatorId:
    index: int
    name: str


@dataclass
class ValidatorSet:
    members: List[ValidatorId]
    stakes: List[int]
    f: int

    def __post_init__(self) -> None:
        if len(self.stakes) != len(self.members):
            raise ValueError("stakes and members differ in length")
        if [m.index for m in self.members] != list(range(len(self.members))):
            raise ValueError("validator indices must be unique and contiguous from 0")
        if any(s < 0 for s in self.stakes):
            raise ValueError("stakes must be non-negative")
        if self.f < 0:
            raise ValueError("f must be non-negative")

    @classmethod
    def uniform(cls, n: int, f: Optional[int] = None, stake: int = 1) -> "ValidatorSet":
        members = [ValidatorId(i, f"v{i}") for i in range(n)]
        return cls(members, [stake] * n, byzantine_bound(n) if f is None else f)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def liveness_guaranteed(self) -> bool:
        return self.size >= 3 * self.f + 1

    def index_of(self, name: str) -> int:
        for m in self.members:
            if m.name == name:
                return m.index
        raise KeyError(name)


def byzantine_bound(n: int) -> int:
    """Largest f with n >= 3f+1."""
    return max(0, (n - 1) // 3)


def quorum_size(f: int) -> int:
    return 2 * f + 1


def advance_threshold(f: int) -> int:
    return f + 1


# ---------------------------------------------------------------------------
# transactions and blocks


@dataclass(frozen=True, order=True)
class TxId:
    id: int
    is_random: bool = False

    @classmethod
    def named(cls, label: str, is_random: bool = False) -> "TxId":
        return cls(fnv1a64(label.encode("utf-8")), is_random)

    def encode(self) -> bytes:
        return enc_u64(self.id) + enc_u8(1 if self.is_random else 0)


@dataclass(frozen=True)
class BlockValue:
    height: int
    transactions: Tuple[TxId, ...]
    read_write_hash: int
    prev_block_id: BlockId
    proposer_index: int

    def __post_init__(self) -> None:
        ids = [t.id for t in self.transactions]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate transaction in block")

    def encode(self) -> bytes:
        return (
            enc_u64(self.height)
            + enc_list([t.encode() for t in self.transactions])
            + enc_u64(self.read_write_hash)
            + enc_u64(self.prev_block_id)
            + enc_i64(self.proposer_index)
        )

    @classmethod
    def decode(cls, data: bytes) -> "BlockValue":
        r = Reader(data)
        height = r.u64()
        txs = tuple(TxId(r.u64(), bool(r.u8())) for _ in range(r.u32()))
        rw = r.u64()
        prev = r.u64()
        proposer = r.i64()
        if not r.done():
            raise ValueError("trailing bytes after block")
        return cls(height, txs, rw, prev, proposer)

    def to_json(self) -> Dict[str, Any]:
        return {
            "height": self.height,
            "transactions": [[t.id, t.is_random] for t in self.transactions],
            "readWriteHash": self.read_write_hash,
            "prevBlockId": self.prev_block_id,
            "proposerIndex": self.proposer_index,
        }


def block_id(v: BlockValue) -> BlockId:
    return fnv1a64(v.encode())


GENESIS_ID: BlockId = fnv1a64(b"genesis")


def execute(transactions: Iterable[TxId], salt: int = 0) -> int:
    """Deterministic execution oracle returning a read-write digest.

    Transactions flagged random fold the executor's salt into the digest, so two
    executors with different salts disagree exactly when a random tx is present.
    """
    parts = []
    for t in transactions:
        parts.append(t.encode())
        if t.is_random:
            parts.append(enc_u64(salt))
    return fnv1a64(b"exec" + enc_list(parts))


def random_transactions(transactions: Iterable[TxId]) -> Tuple[TxId, ...]:
    return tuple(t for t in transactions if t.is_random)


def valid(v: BlockValue, chain_tip: BlockId, expected_height: int, salt: int = 0) -> bool:
    """Height match, parent match, and re-execution reproduces readWriteHash."""
    if v.height != expected_height or v.prev_block_id != chain_tip:
        return False
    return execute(v.transactions, salt) == v.read_write_hash


def structurally_valid(v: BlockValue, chain_tip: BlockId, expected_height: int) -> bool:
    return v.height == expected_height and v.prev_block_id == chain_tip


def make_block(height: int, transactions: Sequence[TxId], prev: BlockId, proposer: int, salt: int = 0) -> BlockValue:
    txs = tuple(transactions)
    return BlockValue(height, txs, execute(txs, salt), prev, proposer)


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class ProtocolMessage:
    kind: MessageKind
    height: int
    round: int
    sender: int
    value: Optional[BlockId] = None
    valid_round: int = -1
    random_tx_ids: Tuple[int, ...] = ()
    sig_token: str = ""
    block: Optional[BlockValue] = None
    wildcard: Any = None

    def __post_init__(self) -> None:
        if self.random_tx_ids and not (self.kind == MessageKind.PREVOTE and self.value is None):
            raise ValueError("only a nil PREVOTE may carry random tx ids")
        if self.valid_round >= 0 and self.valid_round >= self.round:
            raise ValueError("validRound must be below round")
        if self.valid_round < -1:
            raise ValueError("validRound must be -1 or a round number")

    def signing_bytes(self) -> bytes:
        value = enc_u8(0) if self.value is None else enc_u8(1) + enc_u64(self.value)
        return (
            enc_str(self.kind.value)
            + enc_u64(self.height)
            + enc_u64(self.round)
            + value
            + enc_i64(self.valid_round)
            + enc_list([enc_u64(t) for t in self.random_tx_ids])
            + enc_u64(self.sender)
        )

    def summary(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind.value, "h": self.height, "r": self.round, "from": self.sender}
        out["value"] = None if self.value is None else f"{self.value:016x}"
        if self.valid_round >= 0:
            out["validRound"] = self.valid_round
        if self.random_tx_ids:
            out["randomTx"] = [f"{t:016x}" for t in self.random_tx_ids]
        if self.kind == MessageKind.NEWHEIGHT and isinstance(self.wildcard, tuple):
            out["proof"] = [[m.kind.value, m.round, m.sender] for m in self.wildcard
                            if isinstance(m, ProtocolMessage)]
        return out


def fmt_id(v: Optional[BlockId]) -> Optional[str]:
    return None if v is None else f"{v:016x}"


# ---------------------------------------------------------------------------
# consensus state and time parameters


@dataclass
class ConsensusState:
    height: int = 1
    round: int = 0
    phase: Phase = Phase.PROPOSE
    locked_value: Optional[BlockValue] = None
    locked_round: int = -1
    valid_value: Optional[BlockValue] = None
    valid_round: int = -1
    count_phase: Dict[str, int] = field(default_factory=lambda: {"prevote": 0, "precommit": 0})
    count_next_round: Dict[int, int] = field(default_factory=dict)
    count_random: Dict[int, int] = field(default_factory=dict)
    decisions: Dict[int, BlockValue] = field(default_factory=dict)

    def lock(self, v: BlockValue, r: int) -> None:
        self.locked_value, self.locked_round = v, r

    def unlock(self) -> None:
        self.locked_value, self.locked_round = None, -1

    def set_valid(self, v: BlockValue, r: int) -> None:
        self.valid_value, self.valid_round = v, r

    def record_decision(self, h: int, v: BlockValue) -> bool:
        """Write-once; returns False if already recorded with the same value."""
        prior = self.decisions.get(h)
        if prior is not None:
            if block_id(prior) != block_id(v):
                raise DecisionConflict(h, block_id(prior), block_id(v))
            return False
        self.decisions[h] = v
        return True

    def reset_height(self) -> None:
        self.round = 0
        self.phase = Phase.PROPOSE
        self.unlock()
        self.valid_value, self.valid_round = None, -1
        self.count_phase = {"prevote": 0, "precommit": 0}
        self.count_next_round = {}
        self.count_random = {}

    def check(self) -> None:
        assert (self.locked_round == -1) == (self.locked_value is None)
        assert (self.valid_round == -1) == (self.valid_value is None)
        assert self.locked_round <= self.round and self.valid_round <= self.round


@dataclass(frozen=True)
class TimeParams:
    delta: int = 10
    delta_exec: int = 5
    tau_init: int = 10
    tau_step: int = 10
    gst: int = 0
    pre_gst_cap: int = 100

    def __post_init__(self) -> None:
        for name in ("delta", "delta_exec", "tau_init", "tau_step", "gst", "pre_gst_cap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.delta_exec > self.tau_init:
            raise ValueError("deltaExec must not exceed tauInit")

    @classmethod
    def standard(cls, delta: int = 10, gst: int = 0) -> "TimeParams":
        return cls(delta, delta // 2, delta, delta, gst, 10 * delta)

    def tau(self, r: int) -> int:
        return self.tau_init + r * self.tau_step
