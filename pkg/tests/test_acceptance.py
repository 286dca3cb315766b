"""Acceptance criteria C1-C11. Each test prints one PASS/FAIL line.

Run alone with:  pytest tests/test_acceptance.py -s   (or python3 tests/test_acceptance.py)
"""

import contextlib
import itertools
import random
import sys
import time

import pytest

from sweep import random_wal_state, sweep_config
from tendersim.adversary import CUSTOM_SCRIPT, WITHHOLD_VOTES, AdversaryConfig, SigmaRule
from tendersim.analysis import (
    bound,
    bound_expanded,
    check_agreement,
    check_case3_schedule,
    check_termination,
    check_vote_consistency,
    timer_starts,
)
from tendersim.config import Crash, ScenarioConfig, preset, presets, worst_case_config
from tendersim.core_types import TxId, advance_threshold, byzantine_bound, quorum_size
from tendersim.harness import HorizonExceeded, Simulation, run, trace_bytes, write_trace
from tendersim.wal import OUTCOME_VARIANTS, outcome_name, reply_wal

DELTA = 10


@contextlib.contextmanager
def criterion(request, number, title):
    capman = request.config.pluginmanager.getplugin("capturemanager")
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"C{number:<2} FAIL  {title}: {type(exc).__name__}: {exc}"
        raise
    else:
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"C{number:<2} PASS  {title}" + (f" ({extra})" if extra else "")
    finally:
        with capman.global_and_fixture_disabled() if capman else contextlib.nullcontext():
            print("\n" + line, flush=True)


def test_c1_worst_case_bound(request):
    with criterion(request, 1, "worst-case decision time <= 2(f+2)(f+3)delta, f=1..3, 100 seeds") as d:
        start = time.perf_counter()
        for f in (1, 2, 3):
            cfg = worst_case_config(f, DELTA)
            limit = bound(f, DELTA)
            assert limit == 2 * (f + 2) * (f + 3) * DELTA
            worst = 0
            for seed in range(100):
                rep = check_termination(run(cfg, seed).trace, cfg)
                assert rep.tStar == limit
                assert rep.measured[1] <= limit, f"f={f} seed={seed}: {rep.measured[1]} > {limit}"
                worst = max(worst, rep.measured[1])
            d[f"f{f}"] = f"{worst}/{limit}"
        elapsed = time.perf_counter() - start
        d["seconds"] = round(elapsed, 1)
        assert elapsed < 10


def test_c2_non_timeout_latency(request):
    with criterion(request, 2, "corrupted proposer with sigma <= tau-delta: decisions within t0+4delta") as d:
        base = preset("case1c")
        params = base.time_params()
        assert base.adversary.sigma <= params.tau(0) - params.delta_exec
        worst = 0
        for seed in range(100):
            res = run(base, seed)
            t0 = min(r["t"] for r in res.trace if r["kind"] == "send"
                     and r["payload"]["msg"]["kind"] == "PROPOSAL" and r["payload"]["msg"]["r"] == 0)
            decides = [r for r in res.trace if r["kind"] == "decide"]
            assert len(decides) == 3
            assert all(r["payload"]["decisionRound"] == 0 for r in decides)
            latency = max(r["t"] for r in decides) - t0
            assert latency <= 4 * DELTA, f"seed {seed}: {latency}"
            worst = max(worst, latency)
        d["worst"] = f"{worst}/{4 * DELTA}"


def test_c3_case3_schedule(request):
    with criterion(request, 3, "round f+1 milestones t+delta+tau, t+3delta+tau, t+5delta+tau for f=1,2") as d:
        for f in (1, 2):
            cfg = worst_case_config(f, DELTA)
            for seed in range(50):
                rep = check_case3_schedule(run(cfg, seed).trace, cfg)
                assert rep.round == f + 1
            d[f"f{f}"] = "50 seeds"
        rep = check_case3_schedule(run(preset("case3")).trace, preset("case3"))
        d["preset"] = rep.limits


def test_c4_agreement_sweep(request):
    with criterion(request, 4, "agreement over 1000 randomized adversarial runs at n=4") as d:
        strategies = set()
        conflicts = doubles = horizons = 0
        for seed in range(1000):
            cfg = sweep_config(seed)
            strategies.add(cfg.adversary.strategy)
            try:
                trace = run(cfg, seed).trace
            except HorizonExceeded as exc:
                horizons += 1
                trace = exc.trace
            conflicts += not check_agreement(trace).ok
            doubles += sum(r["kind"] == "double_decide" for r in trace)
        d.update(strategies=len(strategies), conflicts=conflicts, double_decisions=doubles, horizons=horizons)
        assert strategies == {"honest_all", "delay_proposer", "withhold_votes", "delay_and_withhold",
                              "worst_case_f_rounds", "custom_script"}
        assert conflicts == 0 and doubles == 0


def test_c5_liveness_failure_witness(request):
    with criterion(request, 5, "2 withholding corruptions at n=4: no decision, HorizonExceeded") as d:
        horizon = 10 * bound(1, DELTA)
        cfg = ScenarioConfig(n=4, f=1, maxTicks=horizon, adversary=AdversaryConfig(
            corrupted=(2, 3), strategy=WITHHOLD_VOTES, strict=False))
        with pytest.raises(HorizonExceeded) as exc:
            run(cfg)
        assert not any(r["kind"] == "decide" for r in exc.value.trace)
        assert max(r["t"] for r in exc.value.trace) <= horizon
        d["horizon"] = horizon


def test_c6_timeout_linearity(request):
    with criterion(request, 6, "round-r propose timers start with (1+r)delta for r in 0..6") as d:
        rules = tuple(SigmaRule(10 ** 6, phase="propose", round=r) for r in range(7))
        cfg = ScenarioConfig(n=4, adversary=AdversaryConfig(strategy=CUSTOM_SCRIPT, sigma_table=rules))
        trace = run(cfg).trace
        starts = timer_starts(trace, "propose/timeout")
        for r in range(7):
            assert starts[r] == {(1 + r) * DELTA}, (r, starts.get(r))
        assert {x["payload"]["decisionRound"] for x in trace if x["kind"] == "decide"} == {7}
        d["deltas"] = [min(starts[r]) for r in range(7)]


def test_c7_quorum_intersection(request):
    with criterion(request, 7, "all 2f+1 quorums intersect in >= f+1 for n=4,7,10") as d:
        from fakes import FakeCtx, fresh_node

        for n in (4, 7, 10):
            f = byzantine_bound(n)
            q = quorum_size(f)
            assert q == 2 * f + 1 and advance_threshold(f) == f + 1
            quorums = list(itertools.combinations(range(n), q))
            smallest = min(len(set(a) & set(b)) for a, b in itertools.combinations_with_replacement(quorums, 2))
            assert smallest >= f + 1
            # one fewer vote is not enough: some pair then shares at most f members
            weak = list(itertools.combinations(range(n), q - 1))
            assert min(len(set(a) & set(b)) for a, b in itertools.product(weak, repeat=2)) <= f
            node = fresh_node(FakeCtx(n=n, f=f))
            assert node.q == q
            d[f"n{n}"] = f"q={q} min={smallest}"


def test_c8_determinism(request, tmp_path):
    with criterion(request, 8, "20 (config, seed) pairs give byte-identical trace files") as d:
        names = sorted(presets())
        pairs = [(names[i % len(names)], 100 + i) for i in range(20)]
        for name, seed in pairs:
            a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
            write_trace(a, run(preset(name), seed).trace)
            write_trace(b, run(preset(name), seed).trace)
            assert a.read_bytes() == b.read_bytes(), (name, seed)
        d["pairs"] = len(pairs)


def test_c9_wal_crash_recovery(request):
    with criterion(request, 9, "100 crash points over 3 heights: no conflicting votes; all replay outcomes hit") as d:
        rng = random.Random(99)
        outcomes = set()
        for i in range(100):
            crash = Crash(node=rng.randrange(4), at=rng.randrange(1, 120), downtime=rng.randrange(1, 60))
            cfg = ScenarioConfig(n=4, heights=3, crashes=(crash,), seed=i)
            res = run(cfg, i)
            assert check_vote_consistency(res.trace, ("prevote", "precommit")) == []
            assert check_agreement(res.trace).ok
            outcomes.update(r["payload"]["outcome"] for r in res.trace if r["kind"] == "restart")
        d["restart_outcomes"] = sorted(outcomes)
        gen = random.Random(2024)
        exercised = {outcome_name(reply_wal(*random_wal_state(gen))) for _ in range(2000)}
        assert exercised == set(OUTCOME_VARIANTS)
        d["generator_outcomes"] = len(exercised)


def test_c10_random_tx_exclusion(request):
    with criterion(request, 10, "random tx removed after exactly f+1 reports; block without it decides") as d:
        cfg = ScenarioConfig(n=4, randomTxHeights=(1,))
        sim = Simulation(cfg, 0)
        res = sim.run()
        rnd = TxId.named("rnd-1", is_random=True).id
        removals = [r for r in res.trace if r["kind"] == "remove_tx"]
        assert {r["node"] for r in removals} == {0, 1, 2, 3}
        assert all(r["payload"]["tx"] == f"{rnd:016x}" and len(r["payload"]["reporters"]) == cfg.f_eff + 1
                   for r in removals)
        first_removal = min(r["t"] for r in removals)
        decides = [r for r in res.trace if r["kind"] == "decide"]
        assert min(r["t"] for r in decides) >= first_removal
        for i in range(4):
            block = sim.nodes[i].cs.decisions[1]
            assert rnd not in {t.id for t in block.transactions} and len(block.transactions) == cfg.txPerHeight
        d["decisionRound"] = decides[0]["payload"]["decisionRound"]


def test_c11_bound_identity(request):
    with criterion(request, 11, "4*sum(tau_r, r<=f) + 4*tau_(f+1) == 2(f+2)(f+3)delta, f<=50") as d:
        for delta in (1, 3, 10):
            for f in range(51):
                oracle = 4 * sum((1 + r) * delta for r in range(f + 1)) + 4 * (f + 2) * delta
                assert oracle == bound_expanded(f, delta, delta) == bound(f, delta) == 2 * (f + 2) * (f + 3) * delta
        d["cases"] = 3 * 51


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
