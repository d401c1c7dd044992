from __future__ import annotations

import random
from collections import defaultdict

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadebench.errors import MalformedCsv, OutOfRangeScore, ProviderBlocked, UnparsableJudgment
from cascadebench.external import (BaselineRow, JudgeCache, JudgeConfig, JudgeResponse, ProviderState,
                                   aggregate_baselines, aggregate_rows, cache_key, parse_judge_score,
                                   probe_provider, read_baseline_csv, rejudge, render_baseline_csv)

ALL_404 = {"/models": 404, "/chat/completions": 404, "/responses": 404}


def naive_matrix(rows):
    cells = defaultdict(list)
    for r in rows:
        cells[(r.model, r.scenario)].append(r.score)
    means = {k: sum(v) / len(v) for k, v in cells.items()}
    per_model = defaultdict(list)
    for (m, _), v in means.items():
        per_model[m].append(v)
    return means, {m: sum(v) / len(v) for m, v in per_model.items()}


def test_single_model_average(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("model,scenario,score\nm,a,9.0\nm,b,8.0\n")
    table = aggregate_baselines(p)
    assert table.averages == {"m": 8.5}


def test_out_of_range_score_row(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("model,scenario,score\nm,a,9\nm,b,11\n")
    with pytest.raises(OutOfRangeScore) as err:
        aggregate_baselines(p)
    assert err.value.row == 3


def test_malformed_csv(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("model,score\nm,9\n")
    with pytest.raises(MalformedCsv):
        aggregate_baselines(p)
    p.write_text("model,scenario,score\nm,a,high\n")
    with pytest.raises(MalformedCsv):
        aggregate_baselines(p)


def test_extra_columns_pass_through(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("model,scenario,score,evaluator,run\nm,a,7,judge,r1\n")
    rows, header = read_baseline_csv(p)
    assert rows[0].extra == {"run": "r1"}
    assert render_baseline_csv(rows, header) == p.read_text().replace(",7,", ",7.0,")


rows_strategy = st.lists(st.builds(BaselineRow, st.sampled_from(["m1", "m2", "m3"]),
                                   st.sampled_from(["s1", "s2", "s3", "s4"]), st.floats(1, 10)),
                         min_size=1, max_size=100)


@given(rows_strategy)
def test_aggregation_equals_group_by(rows):
    table = aggregate_rows(rows)
    means, averages = naive_matrix(rows)
    for (m, s), v in means.items():
        assert abs(table.means[m][s] - v) <= 1e-12
    for m, v in averages.items():
        assert abs(table.averages[m] - v) <= 1e-12
    assert list(table.ranking) == sorted(averages, key=lambda m: (-table.averages[m], m))


@given(rows_strategy)
def test_render_round_trips_through_aggregation(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("csv") / "r.csv"
    p.write_text(render_baseline_csv(rows))
    again, _ = read_baseline_csv(p)
    assert [(r.model, r.scenario, r.score) for r in again] == [(r.model, r.scenario, r.score) for r in rows]


def test_probe_outcomes(stub_factory):
    missing = stub_factory(ALL_404)
    assert probe_provider(missing.base_url, "sk-abc").state is ProviderState.ENDPOINT_MISSING
    healthy = stub_factory()
    status = probe_provider(healthy.base_url, "sk-ant-abc123")
    assert status.state is ProviderState.KEY_SHAPE_MISMATCH and not status.key_shape_ok
    assert probe_provider(healthy.base_url, "sk-proj-abc123").state is ProviderState.OK
    assert probe_provider(healthy.base_url, "sk-proj-abc123").detail == {
        "/models": 200, "/chat/completions": 200, "/responses": 200}


def test_probe_404_beats_key_shape(stub_factory):
    stub = stub_factory({"/responses": 404})
    assert probe_provider(stub.base_url, "sk-ant-x").state is ProviderState.ENDPOINT_MISSING


def test_probe_network_error():
    status = probe_provider("http://127.0.0.1:9/v1", "sk-x", timeout_s=1.0)
    assert status.state is ProviderState.NETWORK_ERROR


def test_cache_key_sensitivity():
    base = cache_key("judge", "s1", "answer text", "v1")
    assert cache_key("judge", "s1", "answer text", "v2") != base
    assert cache_key("judge", "s1", "answer texT", "v1") != base
    assert cache_key("judge", "s1", "answer text", "v1") == base


@pytest.mark.parametrize("reply,score", [("Score: 7\nGood.", 7.0), ("**Score:** 8.5", 8.5),
                                         ("I'd give it 6 out of 10", 6.0), ("Over 2024 criteria: 9", 9.0)])
def test_parse_judge_score(reply, score):
    assert parse_judge_score(reply) == score


def test_unparsable_judgment():
    with pytest.raises(UnparsableJudgment):
        parse_judge_score("great answer")


def responses(n=3):
    return [JudgeResponse(f"s{i}", "model-a", f"scn{i % 2}", f"response {i}") for i in range(n)]


def test_rejudge_cold_then_warm(stub_factory, tmp_path):
    stub = stub_factory(reply="Score: 7")
    config = JudgeConfig(stub.base_url, "sk-test", model="judge-x")
    cache = JudgeCache(tmp_path / "cache.jsonl")
    first = rejudge(responses(), config, cache)
    assert [r.score for r in first.rows] == [7.0, 7.0, 7.0]
    assert len(cache) == 3 and first.network_calls == 3
    before = len(stub.requests)
    second = rejudge(responses(), config, JudgeCache(tmp_path / "cache.jsonl"))
    assert len(stub.requests) == before and second.network_calls == 0
    assert second.csv() == first.csv() and second.cache_hits == 3


def test_rejudge_unparsable_row_reported(stub_factory, tmp_path):
    stub = stub_factory(reply=lambda req: "great answer" if "response 1" in req["messages"][0]["content"]
                        else "Score: 5")
    result = rejudge(responses(), JudgeConfig(stub.base_url, "sk-test"), JudgeCache(tmp_path / "c.jsonl"))
    assert [r.scenario for r in result.rows] == ["scn0", "scn0"]
    assert result.failures[0][0] == "s1" and "UnparsableJudgment" in result.failures[0][1]


def test_rejudge_refuses_blocked_provider(stub_factory, tmp_path):
    stub = stub_factory(ALL_404)
    with pytest.raises(ProviderBlocked):
        rejudge(responses(), JudgeConfig(stub.base_url, "sk-test"), JudgeCache(tmp_path / "c.jsonl"))
    assert stub.count("/chat/completions") == 1  # the probe itself


def test_rejudge_retries_server_errors(tmp_path):
    statuses = [503, 429, 200]
    seen = []

    def handler(request):
        seen.append(request.url.path)
        code = statuses.pop(0)
        if code != 200:
            return httpx.Response(code, json={"error": "busy"})
        return httpx.Response(200, json={"choices": [{"message": {"content": "Score: 4"}}]})

    delays = []
    client = httpx.Client(transport=httpx.MockTransport(handler))
    result = rejudge(responses(1), JudgeConfig("http://judge.test/v1", "sk-test", backoff_s=0.5),
                     JudgeCache(tmp_path / "c.jsonl"), force=True, client=client, sleep=delays.append)
    assert result.rows[0].score == 4.0 and result.network_calls == 1
    assert seen == ["/v1/chat/completions"] * 3 and delays == [0.5, 1.0]


def test_rejudge_output_aggregates(stub_factory, tmp_path):
    rng = random.Random(0)
    stub = stub_factory(reply=lambda req: f"Score: {rng.randint(1, 10)}")
    result = rejudge(responses(6), JudgeConfig(stub.base_url, "sk-test", concurrency=1),
                     JudgeCache(tmp_path / "c.jsonl"))
    out = tmp_path / "out.csv"
    out.write_text(result.csv())
    table = aggregate_baselines(out)
    assert table.ranking == ("model-a",)
    assert set(table.scenarios) == {"scn0", "scn1"}
