import heapq
import random

import pytest
from hypothesis import given, settings, strategies as st

from tendersim.adversary import AdversaryConfig, DelayPlan, WITHHOLD_VOTES, WORST_CASE
from tendersim.analysis import audit_delivery, bound
from tendersim.config import ScenarioConfig, preset, presets
from tendersim.core_types import MessageKind, ProtocolMessage
from tendersim.harness import HorizonExceeded, NetworkModel, Simulation, run, schedule_delivery, trace_bytes

D = 10


def model(gst=0, plan=None, delta=D, cap=10 * D):
    return NetworkModel(delta, gst, cap, random.Random(1), DelayPlan(plan or {}))


def test_post_gst_plan_clamped():
    assert schedule_delivery(1, 5, model(plan={1: 3 * D})) == 5 + D


def test_pre_gst_plan_within_cap_honored():
    assert schedule_delivery(1, 0, model(gst=1000, plan={1: 5 * D})) == 5 * D


def test_zero_delta_is_synchronous():
    m = model(delta=0, cap=0)
    assert all(schedule_delivery(i, 7, m) == 7 for i in range(50))


@given(st.integers(0, 300), st.integers(0, 200), st.integers(0, 20), st.integers(0, 200),
       st.one_of(st.none(), st.integers(0, 500)), st.booleans(), st.integers(0, 100))
def test_delivery_invariants(send, gst, delta, cap_extra, planned, honest, extra):
    cap = delta + cap_extra
    m = NetworkModel(delta, gst, cap, random.Random(send), DelayPlan({} if planned is None else {1: planned}))
    at = schedule_delivery(1, send, m, honest, extra)
    assert send <= at <= send + cap
    if send >= gst and honest:
        assert at <= send + delta
    if send < gst:
        assert at <= max(send, gst + delta)


def test_same_tick_fifo():
    sim = Simulation(ScenarioConfig(n=4))
    sim._push(5, "observe", (0, "a"))
    sim._push(5, "observe", (0, "b"))
    sim._push(3, "observe", (0, "c"))
    order = [heapq.heappop(sim.queue)[3][1] for _ in range(3)]
    assert order == ["c", "a", "b"]


def test_broadcast_enqueues_n_plus_one_events():
    sim = Simulation(ScenarioConfig(n=4))
    msg = sim.sign(0, ProtocolMessage(MessageKind.PREVOTE, 1, 0, 0))
    before = len(sim.queue)
    sim.broadcast(0, msg)
    kinds = sorted(e[2] for e in sim.queue[before:])
    assert kinds == ["deliver"] * 4 + ["observe"]


def test_honest_run_decides_by_four_delta():
    res = run(preset("case1a"))
    decide = [r for r in res.trace if r["kind"] == "decide"]
    assert len(decide) == 4 and len({r["payload"]["blockId"] for r in decide}) == 1
    assert max(r["t"] for r in decide) <= 4 * D


def test_worst_case_decides_in_round_f_plus_one():
    res = run(preset("case3"))
    decide = [r for r in res.trace if r["kind"] == "decide"]
    assert {r["payload"]["decisionRound"] for r in decide} == {2}
    assert max(r["t"] for r in decide) <= bound(1, D)


def test_two_withholders_among_three_halt():
    cfg = ScenarioConfig(n=3, f=1, adversary=AdversaryConfig(corrupted=(0, 1), strategy=WITHHOLD_VOTES, strict=False))
    with pytest.raises(HorizonExceeded) as exc:
        run(cfg)
    assert not any(r["kind"] == "decide" for r in exc.value.trace)
    assert all(not d for d in exc.value.decided.values())


def test_determinism_and_seed_sensitivity():
    cfg = preset("case2c")
    a, b = trace_bytes(run(cfg, 3).trace), trace_bytes(run(cfg, 3).trace)
    assert a == b
    assert trace_bytes(run(cfg, 4).trace) != a


def test_trace_fields_and_causality():
    res = run(preset("case1c"), 9)
    fields = {"t", "seq", "node", "kind", "height", "round", "phase", "payload", "note"}
    sent = set()
    last = (-1, -1)
    for r in res.trace:
        assert set(r) == fields
        assert (r["t"], r["seq"]) > last
        last = (r["t"], r["seq"])
        if r["kind"] == "send":
            sent.update(r["payload"]["mids"])
        if r["kind"] == "deliver":
            assert r["payload"]["mid"] in sent and r["payload"]["sent"] <= r["t"]


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(presets())), st.integers(0, 10_000), st.sampled_from([0, 30, 80]))
def test_presets_decide_and_respect_delivery_bounds(name, seed, gst):
    base = preset(name)
    cfg = ScenarioConfig.from_json({**base.to_json(), "gst": gst, "maxTicks": None})
    res = run(cfg, seed)
    assert audit_delivery(res.trace, cfg) == []
    values = {v[1] for v in res.decisions.values()}
    assert len(values) == 1
