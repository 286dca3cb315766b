"""Proposer selection: modular index rotation and stake-weighted voting power."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .core_types import ValidatorId, ValidatorSet

INDEX_ROTATION = "index_rotation"
WEIGHTED_POWER = "weighted_power"
SCHEMES = (INDEX_ROTATION, WEIGHTED_POWER)


@dataclass(frozen=True)
class RotationState:
    pre_proposer: Optional[ValidatorId]
    blocks_per_proposer: int
    size: int

    def __post_init__(self) -> None:
        if self.blocks_per_proposer < 1:
            raise ValueError("blocks_per_proposer must be >= 1")


def get_proposer(
    state: RotationState, height: int, round: int, validators: ValidatorSet
) -> Tuple[ValidatorId, RotationState]:
    """Return the proposer for (height, round) and the updated rotation state."""
    if not validators.members:
        raise ValueError("empty validator set")
    size = validators.size
    offset = 0
    if state.pre_proposer is not None:
        offset = validators.index_of(state.pre_proposer.name)
    if height % state.blocks_per_proposer == 0:
        offset += 1
    idx = (offset + round % size) % size
    chosen = validators.members[idx]
    return chosen, replace(state, pre_proposer=chosen, size=size)


@dataclass(frozen=True)
class VotingPowerState:
    power: Tuple[int, ...]
    stakes: Tuple[int, ...]

    @classmethod
    def initial(cls, stakes: Sequence[int]) -> "VotingPowerState":
        return cls(tuple(stakes), tuple(stakes))


def update_voting_power(state: VotingPowerState, selected: int) -> VotingPowerState:
    if not 0 <= selected < len(state.stakes):
        raise ValueError("selected is not a member")
    total = sum(state.stakes)
    power = []
    for i, (p, s) in enumerate(zip(state.power, state.stakes)):
        power.append(p - (total - s) if i == selected else p + s)
    return VotingPowerState(tuple(power), state.stakes)


def elect_by_power(state: VotingPowerState) -> int:
    if not state.power:
        raise ValueError("empty voting power state")
    best = 0
    for i, p in enumerate(state.power):
        if p > state.power[best]:
            best = i
    return best


class ProposerSchedule:
    """Height-deterministic proposer lookup used by the engine.

    Every node must agree on Proposer(h, r) no matter which rounds it skipped,
    so the rotation state is advanced once per height (by that height's round-0
    selection) and round offsets are applied to a copy.
    """

    def __init__(self, validators: ValidatorSet, scheme: str = INDEX_ROTATION, blocks_per_proposer: int = 1):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown proposer scheme {scheme!r}")
        self.validators = validators
        self.scheme = scheme
        self.blocks_per_proposer = blocks_per_proposer
        self._rotation: List[RotationState] = [RotationState(None, blocks_per_proposer, validators.size)]
        self._power: List[VotingPowerState] = [VotingPowerState.initial(validators.stakes)]

    def _base(self, height: int) -> int:
        i = height - 1
        if i < 0:
            raise ValueError("height starts at 1")
        while len(self._rotation) <= i:
            h = len(self._rotation)
            _, nxt = get_proposer(self._rotation[-1], h, 0, self.validators)
            self._rotation.append(nxt)
            ps = self._power[-1]
            self._power.append(update_voting_power(ps, elect_by_power(ps)))
        return i

    def proposer(self, height: int, round: int) -> int:
        i = self._base(height)
        if self.scheme == INDEX_ROTATION:
            chosen, _ = get_proposer(self._rotation[i], height, round, self.validators)
            return chosen.index
        ps = self._power[i]
        for _ in range(round):
            ps = update_voting_power(ps, elect_by_power(ps))
        return elect_by_power(ps)
