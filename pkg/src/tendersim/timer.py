"""Logical countdown timers decremented once per global tick."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Hashable, List, Optional, Tuple

SessionKey = Tuple[Hashable, int, str]  # (sid, node, phase tag)


class StartResult(str, Enum):
    STARTED = "Started"
    IGNORED = "Ignored"


@dataclass(frozen=True)
class TimeOver:
    key: SessionKey
    delta: int

    @property
    def sid(self) -> Hashable:
        return self.key[0]

    @property
    def node(self) -> int:
        return self.key[1]

    @property
    def phase(self) -> str:
        return self.key[2]


def _sort_key(key: SessionKey) -> Tuple[str, int, str]:
    return (repr(key[0]), key[1], key[2])


class LogicalTimer:
    """Table of per-(sid, node, phase) countdowns.

    Absent entries are unset. A timer started with k fires on the k-th tick
    after the start; k=0 fires on the next tick. Firing reverts the entry.
    """

    def __init__(self) -> None:
        self._remaining: Dict[SessionKey, int] = {}
        self._started_with: Dict[SessionKey, int] = {}

    def time_start(self, key: SessionKey, delta: int) -> StartResult:
        if delta < 0:
            raise ValueError("delta must be >= 0")
        if key in self._remaining:
            return StartResult.IGNORED
        self._remaining[key] = delta
        self._started_with[key] = delta
        return StartResult.STARTED

    def get_time(self, key: SessionKey) -> Optional[int]:
        return self._remaining.get(key)

    def reset_time(self, key: SessionKey) -> str:
        self._remaining.pop(key, None)
        self._started_with.pop(key, None)
        return "TimeOK"

    def reset_node(self, node: int) -> None:
        for key in [k for k in self._remaining if k[1] == node]:
            self.reset_time(key)

    def tick(self) -> List[TimeOver]:
        fired: List[TimeOver] = []
        for key in sorted(self._remaining, key=_sort_key):
            left = self._remaining[key] - 1
            if left <= 0:
                fired.append(TimeOver(key, self._started_with[key]))
                del self._remaining[key]
                del self._started_with[key]
            else:
                self._remaining[key] = left
        return fired

    def active(self) -> Dict[SessionKey, int]:
        return dict(self._remaining)

    def __len__(self) -> int:
        return len(self._remaining)
