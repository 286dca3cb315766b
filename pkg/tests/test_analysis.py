import copy

import pytest
from hypothesis import given, strategies as st

from tendersim.analysis import (
    Conflict,
    MissingDecision,
    ScheduleViolation,
    audit_delivery,
    bound,
    bound_expanded,
    check_agreement,
    check_case3_schedule,
    check_decision_quorums,
    check_termination,
    check_vote_consistency,
    timer_starts,
)
from tendersim.adversary import AdversaryConfig, WITHHOLD_VOTES
from tendersim.config import ConfigError, ScenarioConfig, load_config, preset, presets, worst_case_config
from tendersim.harness import HorizonExceeded, run


def test_bound_examples():
    assert bound(1, 1) == 24 and bound(0, 1) == 12 and bound(3, 2) == 120
    with pytest.raises(ValueError):
        bound(-1, 1)


@given(st.integers(0, 200), st.integers(1, 100))
def test_bound_monotone(f, d):
    assert bound(f + 1, d) > bound(f, d)


@given(st.integers(0, 50), st.integers(0, 100))
def test_bound_matches_phase_sum(f, d):
    # four phases per round, round r lasting (1 + r) * d, rounds 0..f+1
    total = sum(4 * (1 + r) * d for r in range(f + 2))
    assert bound(f, d) == total == bound_expanded(f, d, d)


def decide(node, h, value, t=5):
    return {"t": t, "seq": t, "node": node, "kind": "decide", "height": h, "round": 0, "phase": "commit",
            "payload": {"blockId": value, "decisionRound": 0}, "note": ""}


def test_agreement_controls():
    assert check_agreement([]).ok
    trace = [decide(i, 1, "aa") for i in range(4)]
    assert check_agreement(trace).ok
    bad = check_agreement(trace + [decide(3, 1, "bb")])
    assert isinstance(bad, Conflict) and bad.values == ("aa", "bb")
    forged = check_agreement(trace[:3] + [decide(3, 1, "bb")])
    assert isinstance(forged, Conflict) and forged.height == 1 and forged.values == ("aa", "bb")


def test_agreement_ignores_corrupted():
    corrupt = {"t": 0, "seq": 0, "node": 3, "kind": "corrupt", "height": 1, "round": 0, "phase": "propose",
               "payload": {}, "note": ""}
    assert check_agreement([corrupt] + [decide(i, 1, "aa") for i in range(3)] + [decide(3, 1, "bb")]).ok


def test_termination_reports():
    cfg = preset("case1a")
    rep = check_termination(run(cfg).trace, cfg)
    assert rep.ok and rep.measured[1] <= 40 and rep.tStar == 240
    assert rep.stats()["max"] == rep.measured[1]


def test_termination_missing_decision():
    cfg = ScenarioConfig(n=3, f=1, adversary=AdversaryConfig(corrupted=(0, 1), strategy=WITHHOLD_VOTES, strict=False),
                         maxTicks=300)
    with pytest.raises(HorizonExceeded) as exc:
        run(cfg)
    with pytest.raises(MissingDecision):
        check_termination(exc.value.trace, cfg)


def standalone_milestones(trace, f, delta):
    """Re-derive the round-(f+1) milestones from raw records, independent of the checker."""
    honest = {r["node"] for r in trace if r["kind"] == "new_round"}
    entries = [r["t"] for r in trace if r["kind"] == "new_round" and r["round"] == f + 1 and r["height"] == 1]
    t = min(entries)
    tau = (1 + f) * delta
    arrivals = {}
    quorum_at = {}
    for r in trace:
        if r["kind"] == "deliver" and r["payload"]["msg"]["kind"] == "PREVOTE" and r["payload"]["msg"]["r"] == f + 1:
            s = arrivals.setdefault(r["node"], set())
            s.add(r["payload"]["msg"]["from"])
            if len(s) == 2 * f + 1:
                quorum_at.setdefault(r["node"], r["t"])
    decides = [r["t"] for r in trace if r["kind"] == "decide" and r["node"] in honest]
    return (max(entries) <= t + delta + tau and max(quorum_at.values()) <= t + 3 * delta + tau
            and max(decides) <= t + 5 * delta + tau)


@pytest.mark.parametrize("f", [0, 1, 2])
def test_case3_schedule_against_standalone_oracle(f):
    cfg = worst_case_config(f)
    for seed in range(10):
        trace = run(cfg, seed).trace
        rep = check_case3_schedule(trace, cfg)
        assert rep.round == f + 1
        assert standalone_milestones(trace, f, cfg.delta)


def test_case3_f0_reduces_to_case1_bounds():
    cfg = worst_case_config(0)
    rep = check_case3_schedule(run(cfg).trace, cfg)
    assert rep.limits["decide"] - rep.t == 5 * cfg.delta + cfg.delta


def test_case3_doctored_trace_fails():
    cfg = preset("case3")
    trace = run(cfg).trace
    doctored = copy.deepcopy(trace)
    for r in doctored:
        if r["kind"] == "decide":
            r["t"] += 6 * cfg.delta
    with pytest.raises(ScheduleViolation) as exc:
        check_case3_schedule(doctored, cfg)
    assert exc.value.milestone == "decide"


def test_delivery_audit_flags_late_message():
    cfg = preset("case1a")
    trace = copy.deepcopy(run(cfg).trace)
    assert audit_delivery(trace, cfg) == []
    late = next(r for r in trace if r["kind"] == "deliver" and r["payload"]["from"] != r["node"])
    late["t"] = late["payload"]["sent"] + cfg.delta + 1
    assert [v.reason for v in audit_delivery(trace, cfg)] == ["exceeds delta after GST"]


def test_timer_starts_and_vote_consistency():
    cfg = preset("case3")
    trace = run(cfg).trace
    starts = timer_starts(trace, "propose/timeout")
    assert starts[0] == {10} and starts[1] == {20} and starts[2] == {30}
    assert check_vote_consistency(trace, ("prevote", "precommit")) == []
    dup = copy.deepcopy(next(r for r in trace if r["kind"] == "precommit"))
    dup["payload"]["value"] = "ffff"
    assert len(check_vote_consistency(trace + [dup])) == 1


def test_decisions_backed_by_quorums():
    for name in presets():
        cfg = preset(name)
        for seed in range(5):
            assert check_decision_quorums(run(cfg, seed).trace, cfg) == []


def test_config_loading(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"comment": "x", "n": 4, "heights": 2}')
    assert load_config(p).heights == 2
    for body in ('{"heights": 2}', '{"n": 4, "bogus": 1}', '{"n": -1}', "not json",
                 '{"n": 4, "deltaExec": 50}', '{"n": 4, "proposerScheme": "x"}'):
        p.write_text(body)
        with pytest.raises(ConfigError):
            load_config(p)
    cfg = preset("case2c")
    assert ScenarioConfig.from_json(cfg.to_json()) == cfg
