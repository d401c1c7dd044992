from __future__ import annotations

import json

import pytest

from cascadebench.cli import main
from cascadebench.fixtures import write_fixture
from cascadebench.jsonl import write_jsonl


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def json_out(capsys, *argv):
    code, out, err = run_cli(capsys, *argv, "--json")
    assert code == 0, err
    lines = [line for line in out.splitlines() if line.strip()]
    assert len(lines) == 1
    obj = json.loads(lines[0])
    assert isinstance(obj, dict)
    return obj


@pytest.fixture
def fx(tmp_path, no_provider_env):
    return {k: tmp_path / "fx" / v.split("/")[-1] for k, v in write_fixture(tmp_path / "fx").items()}


def test_split_writes_frozen_file(tmp_path, fx, capsys):
    out = tmp_path / "splits" / "zh.txt"
    code, _, _ = run_cli(capsys, "split", "--pool", fx["pool"], "--seed", 42, "--dev-fraction", 0.1, "--out", out)
    assert code == 0 and out.exists()
    first = out.read_bytes()
    run_cli(capsys, "split", "--pool", fx["pool"], "--seed", 42, "--dev-fraction", 0.1, "--out", out)
    assert out.read_bytes() == first


def test_cascade_without_thresholds(tmp_path, fx, capsys):
    code, _, err = run_cli(capsys, "run", "--system", "cascade_final", "--pool", fx["pool"], "--out", tmp_path / "r")
    assert code == 1 and "threshold file required" in err


def test_usage_error_prints_subcommand_synopsis(capsys):
    code, _, err = run_cli(capsys, "split", "--bogus")
    assert code == 1 and "usage: cascadebench split" in err
    code, _, err = run_cli(capsys, "compare", "one.json")
    assert code == 1 and "cascadebench compare" in err


def test_empty_subset_is_rejected(tmp_path, fx, capsys):
    split = tmp_path / "s.txt"
    run_cli(capsys, "split", "--pool", fx["pool"], "--seed", 42, "--dev-fraction", 0.1, "--out", split)
    code, _, err = run_cli(capsys, "run", "--config", fx["config"], "--system", "1b_only",
                           "--split", split, "--subset", "dev", "--out", tmp_path / "r")
    assert code == 1 and "no samples to run" in err
    assert not (tmp_path / "r" / "predictions.jsonl").exists()


def test_missing_input_is_io_error(tmp_path, fx, capsys):
    code, _, err = run_cli(capsys, "split", "--pool", tmp_path / "nope.jsonl", "--out", tmp_path / "s.txt")
    assert code == 2


def test_probe_404_is_a_finding(stub_factory, capsys, no_provider_env):
    stub = stub_factory({"/models": 404, "/chat/completions": 404, "/responses": 404})
    code, out, _ = run_cli(capsys, "probe", "--base-url", stub.base_url, "--api-key", "sk-x")
    assert code == 0 and "endpoint_missing" in out
    status = json_out(capsys, "probe", "--base-url", stub.base_url, "--api-key", "sk-x")
    assert status["status"] == "endpoint_missing"
    assert status["endpoints"]["/models"] == 404


def test_probe_reads_env(stub_factory, capsys, monkeypatch, no_provider_env):
    stub = stub_factory()
    monkeypatch.setenv("GPT5_API_BASE", stub.base_url)
    monkeypatch.setenv("GPT5_API_KEY", "sk-ant-zzz")
    assert json_out(capsys, "probe")["status"] == "key_shape_mismatch"
    assert json_out(capsys, "probe", "--api-key", "sk-proj-1")["status"] == "ok"


def test_config_precedence(tmp_path, fx, capsys, monkeypatch):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'[split]\npool = "{fx["pool"]}"\nseed = 7\ndev_fraction = 0.5\nout = "from_file.txt"\n')
    obj = json_out(capsys, "split", "--config", cfg, "--seed", 9)
    assert obj["seed"] == 9 and obj["dev_fraction"] == 0.5
    assert (tmp_path / "from_file.txt").exists()
    monkeypatch.setenv("CASCADEBENCH_CONFIG", str(cfg))
    assert json_out(capsys, "split")["seed"] == 7


def test_full_workflow_json(tmp_path, fx, capsys):
    man = json_out(capsys, "run", "--config", fx["config"], "--out", tmp_path / "run")
    assert man["counts"]["total"] == 80
    json_out(capsys, "run", "--config", fx["config"], "--system", "1b_only", "--out", tmp_path / "base")
    res = json_out(capsys, "rescore", "--run-dir", tmp_path / "run", "--pool", fx["pool"], "--out", tmp_path / "s.jsonl")
    assert res["summary"] == json.loads((tmp_path / "run" / "summary.json").read_text())
    json_out(capsys, "rescore", "--run-dir", tmp_path / "base", "--pool", fx["pool"], "--out", tmp_path / "b.jsonl")
    summ = json_out(capsys, "summarize", "--scores", tmp_path / "s.jsonl", "--out", tmp_path / "summary.json")
    assert summ == res["summary"]
    cmp_ = json_out(capsys, "compare", tmp_path / "run" / "summary.json", tmp_path / "base" / "summary.json")
    assert cmp_["table"].startswith("system,samples,quality")
    delta = json_out(capsys, "delta", "--system-scores", tmp_path / "s.jsonl", "--baseline-scores", tmp_path / "b.jsonl")
    assert set(delta) == {"qa", "ag", "ec", "ip", "pcc", "pls", "qg", "tmg"}
    frozen = json_out(capsys, "freeze-thresholds", "--run-dir", tmp_path / "base", "--pool", fx["pool"],
                      "--out", tmp_path / "th.json")
    assert set(frozen["thresholds"]) == set(delta)


def test_aggregate_baselines_cli(tmp_path, capsys):
    p = tmp_path / "b.csv"
    p.write_text("model,scenario,score\nx,a,9.1\nx,b,9.0\ny,a,8\ny,b,9\n")
    obj = json_out(capsys, "aggregate-baselines", "--csv", p)
    assert obj["models"][0]["model"] == "x"
    code, out, _ = run_cli(capsys, "aggregate-baselines", "--csv", p, "--format", "csv")
    assert out.splitlines()[1] == "x,9.05,9.10,9.00"
    p.write_text("model,scenario,score\nx,a,0.5\n")
    assert run_cli(capsys, "aggregate-baselines", "--csv", p)[0] == 1


def test_rejudge_cli_warm_cache(tmp_path, stub_factory, capsys, no_provider_env):
    stub = stub_factory(reply="Score: 6")
    write_jsonl(tmp_path / "resp.jsonl", [{"sample_id": f"s{i}", "model": "m", "scenario": "a",
                                           "response": f"text {i}"} for i in range(3)])
    args = ("rejudge", "--responses", tmp_path / "resp.jsonl", "--base-url", stub.base_url, "--api-key", "sk-t",
            "--cache", tmp_path / "cache.jsonl", "--out", tmp_path / "out.csv")
    first = json_out(capsys, *args)
    csv1 = (tmp_path / "out.csv").read_bytes()
    n = len(stub.requests)
    second = json_out(capsys, *args)
    assert first["network_calls"] == 3 and second["network_calls"] == 0
    assert len(stub.requests) == n and (tmp_path / "out.csv").read_bytes() == csv1


def test_rejudge_blocked_provider_exit_code(tmp_path, stub_factory, capsys, no_provider_env):
    stub = stub_factory({"/models": 404})
    write_jsonl(tmp_path / "resp.jsonl", [{"sample_id": "s", "model": "m", "scenario": "a", "response": "r"}])
    code, _, err = run_cli(capsys, "rejudge", "--responses", tmp_path / "resp.jsonl", "--base-url", stub.base_url,
                           "--cache", tmp_path / "c.jsonl")
    assert code == 2 and "endpoint_missing" in err


def test_make_fixture(tmp_path, capsys):
    obj = json_out(capsys, "make-fixture", "--out", tmp_path / "f", "--per-stratum", 2)
    assert (tmp_path / "f" / "pool.jsonl").read_text().count("\n") == 32
    assert set(obj) == {"pool", "router_script", "specialist_script", "thresholds", "config"}
