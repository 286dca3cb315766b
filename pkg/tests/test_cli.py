import json
import os
import subprocess
import sys

from tendersim.cli import main, parse_seeds


def cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "tendersim", *args], capture_output=True, text=True,
                          env={**os.environ, **(env or {})})


def test_bound(capsys):
    assert main(["bound", "--f", "1", "--delta", "10"]) == 0
    assert capsys.readouterr().out.strip() == "240"
    assert main(["bound", "--f", "-1", "--delta", "10"]) == 2


def test_run_then_check_in_separate_processes(tmp_path):
    trace = tmp_path / "t.jsonl"
    r = cli("run", "--config", "case1a", "--seed", "3", "--trace", str(trace))
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["status"] == "ok"
    c = cli("check", "--trace", str(trace), "--config", "case1a")
    assert c.returncode == 0, c.stdout
    report = json.loads(c.stdout)
    assert report["agreement"] == "ok" and report["termination"]["compliant"] == {"1": True}


def test_check_flags_doctored_trace(tmp_path):
    trace = tmp_path / "t.jsonl"
    assert main(["run", "--config", "case1a", "--trace", str(trace)]) == 0
    lines = trace.read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    first = next(r for r in recs if r["kind"] == "decide")
    forged = dict(first, node=(first["node"] + 1) % 4, payload={**first["payload"], "blockId": "00" * 8})
    trace.write_text("\n".join(lines + [json.dumps(forged)]) + "\n")
    assert main(["check", "--trace", str(trace), "--config", "case1a"]) == 1


def test_missing_n_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"delta": 10}')
    assert main(["run", "--config", str(cfg), "--trace", str(tmp_path / "x.jsonl")]) == 2
    assert "n" in capsys.readouterr().err


def test_horizon_exits_1(tmp_path):
    cfg = tmp_path / "halt.json"
    cfg.write_text(json.dumps({"n": 3, "f": 1, "maxTicks": 200, "adversary": {
        "corrupted": [0, 1], "strategy": "withhold_votes", "strict": False}}))
    assert main(["run", "--config", str(cfg), "--trace", str(tmp_path / "h.jsonl")]) == 1
    assert (tmp_path / "h.jsonl").exists()


def test_default_trace_dir(tmp_path):
    r = cli("run", "--config", "case2a", "--seed", "5", env={"SIM_TRACE_DIR": str(tmp_path)})
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "case2a-5.jsonl").exists()


def test_batch(tmp_path, capsys):
    assert main(["batch", "--config", "case3", "--seeds", "0..7", "--jobs", "2", "--trace-dir", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["runs"] == 8 and summary["failed"] == [] and summary["decisionTime"]["max"] <= 240
    assert len(list(tmp_path.glob("*.jsonl"))) == 8
    assert main(["batch", "--config", "case3", "--seeds", "5..1"]) == 2


def test_parse_seeds():
    assert parse_seeds("2..4") == [2, 3, 4] and parse_seeds("1,5") == [1, 5]


def test_scenarios(capsys):
    assert main(["scenario", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("case1a", "case1b", "case1c", "case2a", "case2b", "case2c", "case3"):
        assert name in out
    assert main(["scenario", "show", "case3"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["adversary"]["strategy"] == "worst_case_f_rounds" and "comment" in shown
    assert main(["scenario", "show", "nope"]) == 2


def test_shipped_scenario_files_load():
    root = os.path.join(os.path.dirname(__file__), "..", "scenarios")
    files = sorted(f for f in os.listdir(root) if f.endswith(".json"))
    assert len(files) == 7
    for f in files:
        assert main(["run", "--config", os.path.join(root, f), "--trace", os.devnull]) == 0
