"""Write-ahead log of accepted proposals and the height-consistent replay run
when a validator starts a round (or restarts after a crash)."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

from .core_types import BlockValue, Reader, enc_i64, enc_str, enc_u32, enc_u64, enc_u8

WAL_WRITE = "WalWrite"
NON_WAL_WRITE = "NonWalWrite"
MODES = (WAL_WRITE, NON_WAL_WRITE)


class EntryType(str, Enum):
    PROPOSAL_ENTRY = "PROPOSAL_ENTRY"
    OTHER = "OTHER"


class OutOfOrder(Exception):
    pass


@dataclass(frozen=True)
class WalEntry:
    height: int
    entry_type: EntryType
    payload: bytes

    def encode(self) -> bytes:
        return enc_u64(self.height) + enc_str(self.entry_type.value) + enc_u32(len(self.payload)) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "WalEntry":
        r = Reader(data)
        height = r.u64()
        etype = EntryType(r.string())
        n = r.u32()
        payload = data[r.pos:r.pos + n]
        if len(payload) != n or r.pos + n != len(data):
            raise ValueError("bad wal record length")
        return cls(height, etype, payload)


@dataclass(frozen=True)
class WalProposal:
    """Payload of a PROPOSAL_ENTRY: the accepted block and the round it was seen in."""

    round: int
    valid_round: int
    block: BlockValue

    def encode(self) -> bytes:
        return enc_u64(self.round) + enc_i64(self.valid_round) + self.block.encode()

    @classmethod
    def decode(cls, data: bytes) -> "WalProposal":
        r = Reader(data)
        rnd = r.u64()
        vr = r.i64()
        return cls(rnd, vr, BlockValue.decode(data[r.pos:]))


@dataclass
class WalState:
    mode: str = WAL_WRITE
    entries: List[WalEntry] = field(default_factory=list)


@dataclass(frozen=True)
class ModeSet:
    mode: str


@dataclass(frozen=True)
class WalError:
    status: str


@dataclass(frozen=True)
class WalRestored:
    status: str
    wal_height: int


@dataclass(frozen=True)
class EnterPrecommit:
    proposal: WalProposal
    height: int


ReplayOutcome = Union[WalRestored, WalError, EnterPrecommit]

OUTCOME_VARIANTS = (
    "no_write_mode",
    "iterator_fail",
    "wal_height_inconsistent",
    "chain_ahead",
    "enter_precommit",
    "invalid_entry_type",
    "replay_fail",
)


def outcome_name(o: ReplayOutcome) -> str:
    if isinstance(o, EnterPrecommit):
        return "enter_precommit"
    return o.status


def set_mode(state: WalState, mode: str) -> Union[ModeSet, WalError]:
    if mode not in MODES:
        return WalError("invalid_mode")
    state.mode = mode
    return ModeSet(mode)


def wal_append(state: WalState, entry: WalEntry) -> WalState:
    if state.mode != WAL_WRITE:
        return state
    if state.entries and entry.height < state.entries[-1].height:
        raise OutOfOrder(f"height {entry.height} after {state.entries[-1].height}")
    state.entries.append(entry)
    return state


def reply_wal(state: WalState, current_height: int) -> ReplayOutcome:
    """Read-only replay. `current_height` is the committed chain height."""
    if state.mode == NON_WAL_WRITE:
        return WalRestored("no_write_mode", current_height)
    if not state.entries:
        return WalRestored("iterator_fail", current_height)
    last = state.entries[-1]
    if current_height + 1 < last.height:
        return WalError("wal_height_inconsistent")
    if current_height >= last.height:
        return WalRestored("chain_ahead", current_height)
    if last.entry_type != EntryType.PROPOSAL_ENTRY:
        return WalError("invalid_entry_type")
    try:
        proposal = WalProposal.decode(last.payload)
    except (ValueError, struct.error, UnicodeDecodeError):
        return WalError("replay_fail")
    return EnterPrecommit(proposal, last.height)


def proposal_entry(height: int, round: int, valid_round: int, block: BlockValue) -> WalEntry:
    return WalEntry(height, EntryType.PROPOSAL_ENTRY, WalProposal(round, valid_round, block).encode())


# ---------------------------------------------------------------------------
# on-disk form: wal-<node>.bin holding [u32 length][record] frames


def wal_path(directory: Union[str, Path], node: int) -> Path:
    return Path(directory) / f"wal-{node}.bin"


def write_log(path: Union[str, Path], entries: List[WalEntry]) -> None:
    with open(path, "wb") as fh:
        for e in entries:
            rec = e.encode()
            fh.write(enc_u32(len(rec)) + rec)


def append_record(path: Union[str, Path], entry: WalEntry) -> None:
    rec = entry.encode()
    with open(path, "ab") as fh:
        fh.write(enc_u32(len(rec)) + rec)
        fh.flush()
        os.fsync(fh.fileno())


def read_log(path: Union[str, Path]) -> List[WalEntry]:
    data = Path(path).read_bytes()
    out: List[WalEntry] = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated frame header")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("truncated frame")
        out.append(WalEntry.decode(data[pos:pos + n]))
        pos += n
    return out


class FileWal:
    """WalState mirrored to a file; semantics identical to the in-memory log."""

    def __init__(self, path: Union[str, Path], mode: str = WAL_WRITE):
        self.path = Path(path)
        entries = read_log(self.path) if self.path.exists() else []
        self.state = WalState(mode, entries)

    def append(self, entry: WalEntry) -> None:
        before = len(self.state.entries)
        wal_append(self.state, entry)
        if len(self.state.entries) > before:
            append_record(self.path, entry)
