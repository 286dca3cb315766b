"""Scenario configuration: JSON loading, validation and the built-in presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .adversary import (
    CUSTOM_SCRIPT,
    DELAY_AND_WITHHOLD,
    DELAY_PROPOSER,
    HONEST_ALL,
    WITHHOLD_VOTES,
    WORST_CASE,
    AdversaryConfig,
    ScriptAction,
    SigmaRule,
)
from .core_types import TimeParams, byzantine_bound
from .engine import COMMIT_SCHEMES, PRECOMMIT_QUORUM
from .proposer import INDEX_ROTATION, SCHEMES
from .wal import MODES, WAL_WRITE


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Crash:
    node: int
    at: int
    downtime: int


REQUIRED = ("n",)
NUMERIC = ("n", "delta", "deltaExec", "tauInit", "tauStep", "gst", "preGstCap", "heights", "maxTicks", "seed",
           "txPerHeight")


@dataclass
class ScenarioConfig:
    n: int
    f: Optional[int] = None
    delta: int = 10
    deltaExec: Optional[int] = None
    tauInit: Optional[int] = None
    tauStep: Optional[int] = None
    gst: int = 0
    preGstCap: Optional[int] = None
    heights: int = 1
    maxTicks: Optional[int] = None
    proposerScheme: str = INDEX_ROTATION
    commitScheme: str = PRECOMMIT_QUORUM
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    walMode: str = WAL_WRITE
    seed: int = 0
    stakes: Optional[Tuple[int, ...]] = None
    txPerHeight: int = 3
    randomTxHeights: Tuple[int, ...] = ()
    crashes: Tuple[Crash, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        if self.deltaExec is None:
            self.deltaExec = self.delta // 2
        if self.tauInit is None:
            self.tauInit = self.delta
        if self.tauStep is None:
            self.tauStep = self.delta
        if self.preGstCap is None:
            self.preGstCap = 10 * self.delta
        if self.maxTicks is None:
            self.maxTicks = self.gst + 10 * self.heights * 2 * (self.f_eff + 2) * (self.f_eff + 3) * max(self.delta, 1)

    @property
    def f_eff(self) -> int:
        return self.f if self.f is not None else byzantine_bound(self.n)

    def time_params(self) -> TimeParams:
        return TimeParams(self.delta, self.deltaExec, self.tauInit, self.tauStep, self.gst, self.preGstCap)

    def validate(self) -> "ScenarioConfig":
        for name in NUMERIC:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        for name in ("deltaExec", "tauInit", "tauStep", "preGstCap", "maxTicks"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.f is not None and (not isinstance(self.f, int) or self.f < 0):
            raise ConfigError("f must be a non-negative integer")
        if self.heights < 1:
            raise ConfigError("heights must be >= 1")
        if self.deltaExec > self.tauInit:
            raise ConfigError("deltaExec must not exceed tauInit")
        if self.proposerScheme not in SCHEMES:
            raise ConfigError(f"proposerScheme must be one of {SCHEMES}")
        if self.commitScheme not in COMMIT_SCHEMES:
            raise ConfigError(f"commitScheme must be one of {COMMIT_SCHEMES}")
        if self.walMode not in MODES:
            raise ConfigError(f"walMode must be one of {MODES}")
        if self.stakes is not None and (len(self.stakes) != self.n or any(s <= 0 for s in self.stakes)):
            raise ConfigError("stakes must list one positive stake per validator")
        for c in self.crashes:
            if not 0 <= c.node < self.n or c.at < 0 or c.downtime < 0:
                raise ConfigError(f"bad crash entry {c}")
        try:
            self.adversary.validate(self.n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # -- JSON ---------------------------------------------------------------

    @classmethod
    def from_json(cls, d: Dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        missing = [k for k in REQUIRED if k not in d]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}")
        known = {f for f in cls.__dataclass_fields__} | {"comment"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown key(s): {', '.join(sorted(extra))}")
        args = {k: v for k, v in d.items() if k != "comment"}
        try:
            args["adversary"] = AdversaryConfig.from_json(d.get("adversary", {}))
            if "stakes" in args and args["stakes"] is not None:
                args["stakes"] = tuple(args["stakes"])
            args["randomTxHeights"] = tuple(args.get("randomTxHeights", ()))
            args["crashes"] = tuple(Crash(int(c["node"]), int(c["at"]), int(c["downtime"]))
                                    for c in args.get("crashes", ()))
            cfg = cls(**args)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        return cfg.validate()

    def to_json(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "n": self.n, "delta": self.delta, "deltaExec": self.deltaExec, "tauInit": self.tauInit,
            "tauStep": self.tauStep, "gst": self.gst, "preGstCap": self.preGstCap, "heights": self.heights,
            "maxTicks": self.maxTicks, "proposerScheme": self.proposerScheme, "commitScheme": self.commitScheme,
            "adversary": self.adversary.to_json(), "walMode": self.walMode, "seed": self.seed,
            "txPerHeight": self.txPerHeight,
        }
        if self.f is not None:
            out["f"] = self.f
        if self.stakes is not None:
            out["stakes"] = list(self.stakes)
        if self.randomTxHeights:
            out["randomTxHeights"] = list(self.randomTxHeights)
        if self.crashes:
            out["crashes"] = [{"node": c.node, "at": c.at, "downtime": c.downtime} for c in self.crashes]
        if self.name:
            out["name"] = self.name
        return out

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return ScenarioConfig.from_json(data)


# ---------------------------------------------------------------------------
# presets


def _preset(name: str, description: str, **kw: Any) -> Tuple[str, ScenarioConfig]:
    return description, ScenarioConfig(name=name, **kw).validate()


def presets() -> Dict[str, Tuple[str, ScenarioConfig]]:
    """name -> (description, config)."""
    return dict([
        ("case1a", _preset("case1a", "no timeouts, all validators honest, prompt delivery",
                           n=4, adversary=AdversaryConfig(strategy=HONEST_ALL))),
        ("case1b", _preset("case1b", "no timeouts, one Byzantine validator withholding its votes",
                           n=4, adversary=AdversaryConfig(corrupted=(2,), strategy=WITHHOLD_VOTES))),
        ("case1c", _preset("case1c", "no timeouts, Byzantine round-0 proposer delays within the timeout",
                           n=4, adversary=AdversaryConfig(corrupted=(1,), strategy=DELAY_PROPOSER, sigma=5))),
        ("case2a", _preset("case2a", "proposer delayed past the propose timeout, next round commits",
                           n=4, adversary=AdversaryConfig(strategy=DELAY_PROPOSER))),
        ("case2b", _preset("case2b", "Byzantine proposer delays past the timeout and withholds votes",
                           n=4, adversary=AdversaryConfig(corrupted=(1,), strategy=DELAY_AND_WITHHOLD))),
        ("case2c", _preset("case2c", "Byzantine proposer sends conflicting proposals and equivocates",
                           n=4, adversary=AdversaryConfig(
                               corrupted=(1,), strategy=CUSTOM_SCRIPT,
                               actions=(ScriptAction(1, "conflicting_proposal"), ScriptAction(1, "equivocate")),
                               sigma_table=(SigmaRule(6, node=1, phase="propose", round=0),)))),
        ("case3", _preset("case3", "first f rounds killed (Byzantine proposers, then delay), commit in round f+1",
                          n=4, adversary=AdversaryConfig(strategy=WORST_CASE))),
    ])


def preset(name: str) -> ScenarioConfig:
    table = presets()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(table)}")
    return table[name][1]


def worst_case_config(f: int, delta: int = 10, seed: int = 0, **kw: Any) -> ScenarioConfig:
    return ScenarioConfig(n=3 * f + 1, delta=delta, seed=seed, adversary=AdversaryConfig(strategy=WORST_CASE),
                          name=f"worst_case_f{f}", **kw).validate()


def preset_names() -> List[str]:
    return list(presets())
