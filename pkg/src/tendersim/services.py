"""Auxiliary ideal services: authenticated send with a key registry, an ideal
signature registry, broadcast fan-out, leakage-parameterised channels and
round synchronisation flags."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Set, Tuple


class UnregisteredSender(Exception):
    pass


class SignerUnknown(Exception):
    pass


class SignatureConflict(Exception):
    pass


# ---------------------------------------------------------------------------
# authenticated send


@dataclass(frozen=True)
class DeliveredMessage:
    sender: int
    receiver: int
    message: Any


# A substitution policy sees (sender, receiver, m) and may return (receiver', m').
SubstitutionPolicy = Callable[[int, int, Any], Optional[Tuple[int, Any]]]


class AuthService:
    """Authenticated channel with Register/Lookup/Delete key management."""

    def __init__(self, approve: Optional[Callable[[str, int], bool]] = None):
        self.registered: Dict[int, str] = {}
        self.corrupted: Set[int] = set()
        self._approve = approve or (lambda op, party: True)

    def register(self, party: int, key: str) -> bool:
        if party in self.registered or not self._approve("register", party):
            return False
        self.registered[party] = key
        return True

    def lookup(self, party: int) -> Optional[str]:
        if not self._approve("lookup", party):
            return None
        return self.registered.get(party)

    def delete(self, party: int) -> bool:
        if party not in self.registered or not self._approve("delete", party):
            return False
        del self.registered[party]
        return True

    def mark_corrupted(self, party: int) -> None:
        self.corrupted.add(party)

    def send(self, sender: int, receiver: int, m: Any, policy: Optional[SubstitutionPolicy] = None) -> DeliveredMessage:
        if sender not in self.registered:
            raise UnregisteredSender(sender)
        if sender in self.corrupted and policy is not None:
            sub = policy(sender, receiver, m)
            if sub is not None:
                receiver, m = sub
        return DeliveredMessage(sender, receiver, m)

    def verify_identity(self, claimed: int, authenticated: int) -> bool:
        return claimed == authenticated and claimed in self.registered


# ---------------------------------------------------------------------------
# ideal signatures


class SignatureService:
    """Registry-backed signatures giving completeness, consistency and
    unforgeability for uncorrupted signers."""

    def __init__(self, adversary_bit: Optional[Callable[[bytes, str, str], int]] = None,
                 token_source: Optional[Callable[[int, bytes], str]] = None):
        self.keys: Dict[int, str] = {}
        self._owners: Dict[str, int] = {}
        self.records: Dict[Tuple[bytes, str, str], int] = {}
        self.corrupted: Set[int] = set()
        self._signed_set: Set[Tuple[bytes, str]] = set()
        self._counter = itertools.count(1)
        self._adversary_bit = adversary_bit or (lambda m, sig, key: 0)
        self._token_source = token_source
        self.log: List[Tuple[bytes, str, str, int]] = []

    def keygen(self, signer: int) -> str:
        key = self.keys.get(signer)
        if key is None:
            key = f"vk-{signer}"
            self.keys[signer] = key
            self._owners[key] = signer
        return key

    def key_of(self, signer: int) -> Optional[str]:
        return self.keys.get(signer)

    def _owner(self, key: str) -> Optional[int]:
        return self._owners.get(key)

    def mark_corrupted(self, signer: int) -> None:
        self.corrupted.add(signer)

    def sign(self, signer: int, m: bytes) -> str:
        key = self.keys.get(signer)
        if key is None:
            raise SignerUnknown(signer)
        if self._token_source is not None:
            token = self._token_source(signer, m)
        else:
            token = f"sig-{next(self._counter)}"
        if self.records.get((m, token, key)) == 0:
            raise SignatureConflict("token already recorded as invalid for this message")
        self.records[(m, token, key)] = 1
        self._signed_set.add((m, key))
        return token

    def _signed(self, m: bytes, key: str) -> bool:
        return (m, key) in self._signed_set

    def verify(self, m: bytes, sig: str, key: str) -> int:
        owner = self._owner(key)
        if owner is not None and self.records.get((m, sig, key)) == 1:
            bit = 1
        elif owner is not None and owner not in self.corrupted and not self._signed(m, key):
            bit = 0
            self.records[(m, sig, key)] = 0
        elif (m, sig, key) in self.records:
            bit = self.records[(m, sig, key)]
        else:
            bit = 1 if self._adversary_bit(m, sig, key) else 0
            self.records[(m, sig, key)] = bit
        self.log.append((m, sig, key, bit))
        return bit


# ---------------------------------------------------------------------------
# broadcast and channels


@dataclass(frozen=True)
class Broadcasted:
    receiver: Optional[int]  # None marks the adversary observation
    sender: int
    message: Any


def bc_broadcast(sender: int, m: Any, members: Iterable[int]) -> List[Broadcasted]:
    out = [Broadcasted(r, sender, m) for r in sorted(set(members))]
    out.append(Broadcasted(None, sender, m))
    return out


LEAK_VARIANTS = ("ac", "sra", "ssa", "fa", "sc", "sa")


@dataclass(frozen=True)
class ChannelLeak:
    variant: str
    tuple: Tuple[Any, ...]
    mid: int


_mids = itertools.count(1)


def ch_leak(variant: str, sender: int, receiver: int, m: Any, length: Optional[int] = None,
            mid: Optional[int] = None) -> ChannelLeak:
    size = length if length is not None else len(m)
    shapes = {
        "ac": (sender, receiver, m),
        "sra": (sender, size),
        "ssa": (receiver, size),
        "fa": (size,),
        "sc": (sender, receiver, size),
        "sa": (receiver, m),
    }
    if variant not in shapes:
        raise ValueError(f"unknown channel variant {variant!r}")
    return ChannelLeak(variant, shapes[variant], next(_mids) if mid is None else mid)


# ---------------------------------------------------------------------------
# round synchronisation


@dataclass
class SyncFlags:
    d: Dict[int, int]
    honest: Set[int]

    @classmethod
    def fresh(cls, parties: Iterable[int], honest: Iterable[int]) -> "SyncFlags":
        return cls({p: 0 for p in parties}, set(honest))


@dataclass(frozen=True)
class Switch:
    party: int
    reset: bool


def sync_round_ok(p: int, flags: SyncFlags) -> Tuple[SyncFlags, Switch]:
    d = dict(flags.d)
    d[p] = 1
    reset = all(d.get(i, 0) == 1 for i in flags.honest)
    if reset:
        d = {i: 0 for i in d}
    return SyncFlags(d, set(flags.honest)), Switch(p, reset)


def sync_request_round(p: int, flags: SyncFlags) -> int:
    return flags.d.get(p, 0)


class SyncService:
    """Mutable wrapper the harness owns; records every switch observation."""

    def __init__(self, parties: Iterable[int], honest: Iterable[int]):
        self.flags = SyncFlags.fresh(parties, honest)
        self.switches: List[Switch] = []
        self.generation = 0

    def round_ok(self, p: int) -> Switch:
        self.flags, sw = sync_round_ok(p, self.flags)
        self.switches.append(sw)
        if sw.reset:
            self.generation += 1
        return sw

    def request_round(self, p: int) -> int:
        return sync_request_round(p, self.flags)
