from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadebench.domain import (CLOSED_FORM_TASKS, DEFAULT_FAMILY_MAP, OPEN_FORM_TASKS, BackendCall,
                                 ContractKind, DraftBundle, Language, OutputContract, PredictionRecord,
                                 Route, RouteDecision, Sample, SummaryReport, TaskFamily, TaskKey,
                                 TraceRecord, ValidatorAction, check_mapping, default_contract, family_of,
                                 is_closed_form, parse_family_mapping, parse_task_key)
from cascadebench.errors import MappingIncomplete, SchemaError, UnknownTask

EXPECTED_FAMILY = {
    TaskKey.QA: TaskFamily.REASONING, TaskKey.EC: TaskFamily.REASONING,
    TaskKey.AG: TaskFamily.ASSESSMENT, TaskKey.PCC: TaskFamily.ASSESSMENT,
    TaskKey.IP: TaskFamily.PLANNING, TaskKey.PLS: TaskFamily.PLANNING,
    TaskKey.QG: TaskFamily.PLANNING, TaskKey.TMG: TaskFamily.PLANNING,
}


def test_exactly_eight_tasks_with_stable_strings():
    assert [t.value for t in TaskKey] == ["qa", "ag", "ec", "ip", "pcc", "pls", "qg", "tmg"]
    assert TaskKey.QA.display == "Q&A"


@pytest.mark.parametrize("text,expected", [("Q&A", TaskKey.QA), ("qg", TaskKey.QG), ("  TMG ", TaskKey.TMG)])
def test_parse_task_key(text, expected):
    assert parse_task_key(text) is expected


@pytest.mark.parametrize("text", ["es", "ES", "", "quiz"])
def test_unknown_tasks_rejected(text):
    with pytest.raises(UnknownTask):
        parse_task_key(text)


def test_default_family_table_round_trip():
    for task in TaskKey:
        assert family_of(task) is EXPECTED_FAMILY[task]
    raw = {t.value: f.value for t, f in DEFAULT_FAMILY_MAP.items()}
    assert parse_family_mapping(raw) == dict(DEFAULT_FAMILY_MAP)


def test_incomplete_mapping():
    partial = {t: f for t, f in DEFAULT_FAMILY_MAP.items() if t is not TaskKey.TMG}
    with pytest.raises(MappingIncomplete):
        check_mapping(partial)
    with pytest.raises(MappingIncomplete):
        family_of(TaskKey.TMG, partial)


def test_closed_and_open_forms_partition_tasks():
    assert CLOSED_FORM_TASKS | OPEN_FORM_TASKS == frozenset(TaskKey)
    assert not CLOSED_FORM_TASKS & OPEN_FORM_TASKS
    assert is_closed_form(TaskKey.QA)
    assert not is_closed_form(TaskKey.IP)
    assert not is_closed_form(TaskKey.TMG)
    for t in TaskKey:
        assert is_closed_form(t) == (t not in {TaskKey.IP, TaskKey.PCC, TaskKey.PLS, TaskKey.QG, TaskKey.TMG})


def test_default_contracts_match_task_form():
    for t in TaskKey:
        kind = default_contract(t).kind
        assert (kind is ContractKind.OPEN_FORM) == (not is_closed_form(t))
    assert default_contract(TaskKey.IP).min_content_chars == 40
    assert default_contract(TaskKey.QA).min_content_chars == 1


def test_sample_rejects_wrong_contract_kind():
    with pytest.raises(SchemaError):
        Sample("x", TaskKey.IP, Language.EN, "p", None, OutputContract(ContractKind.EXACT_ANSWER))
    with pytest.raises(SchemaError):
        OutputContract(ContractKind.EXACT_ANSWER, ("score",))


def test_route_decision_tie_escalates():
    assert RouteDecision.from_risk(0.5, 0.5).route is Route.ESCALATE_7B
    assert RouteDecision.from_risk(0.2, 0.5).route is Route.ACCEPT_1B
    with pytest.raises(SchemaError):
        RouteDecision(Route.ACCEPT_1B, 0.5, 0.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_route_decision_strict_inequality(risk, tau):
    d = RouteDecision.from_risk(risk, tau)
    assert (d.route is Route.ACCEPT_1B) == (risk < tau)


def test_draft_bundle_confidence_rules():
    with pytest.raises(SchemaError):
        DraftBundle("a", None, 1.5)
    with pytest.raises(SchemaError):
        DraftBundle("a", None, 0.3, {}, parse_ok=False)
    assert DraftBundle.unparsed().confidence == 0.0


texts = st.text(max_size=30)
families = st.sampled_from(list(TaskFamily)) | st.none()
flags = st.dictionaries(st.sampled_from(["schema_ok", "language_ok", "length_ok"]), st.booleans())


@st.composite
def bundles(draw):
    parse_ok = draw(st.booleans())
    conf = draw(st.floats(0, 1)) if parse_ok else 0.0
    return DraftBundle(draw(texts), draw(families), conf, draw(flags), parse_ok)


@given(bundles())
def test_draft_bundle_round_trip(b):
    assert DraftBundle.from_dict(b.to_dict()) == b


@given(st.sampled_from(list(TaskKey)), st.sampled_from(list(Language)), texts, texts)
def test_sample_round_trip(task, lang, sid, prompt):
    gold = None
    if task is TaskKey.QA:
        gold = "42"
    elif task is TaskKey.AG:
        gold = {"score": 4}
    elif task is TaskKey.EC:
        gold = {"corrected": prompt}
    s = Sample(sid or "id", task, lang, prompt, gold)
    assert Sample.from_dict(s.to_dict()) == s


@given(bundles(), st.floats(0, 1), st.floats(0, 1), st.booleans(), st.sampled_from(list(TaskKey)),
       st.sampled_from(list(Language)), st.floats(0, 100))
def test_trace_and_prediction_round_trip(b, risk, tau, forced, task, lang, latency):
    decision = RouteDecision.from_risk(risk, tau).route
    actions = (ValidatorAction("validate_format", "pass"),) + ((ValidatorAction("forced_escalation", "escalated"),)
                                                               if forced else ())
    calls = (BackendCall("draft", "mock-router", 10, 5, 0.1),)
    t = TraceRecord("s1", b, risk, tau, decision, decision, actions,
                    {"draft": 0.1, "calibrate": 0.0, "specialist": 0.0, "validate": 0.0}, calls)
    assert TraceRecord.from_dict(t.to_dict()) == t
    assert t.forced_escalation == forced
    p = PredictionRecord("s1", task, lang, "cascade_final", "out", decision, latency,
                         "2026-01-01T00:00:00+00:00")
    assert PredictionRecord.from_dict(p.to_dict()) == p


def test_summary_round_trip_and_unit():
    s = SummaryReport("x", 3, 0.5, 0.75, 1.25, 0.2, 0.8, 100)
    d = s.to_dict()
    assert d["cost_proxy_unit"] == "output_chars"
    assert SummaryReport.from_dict(d) == s
