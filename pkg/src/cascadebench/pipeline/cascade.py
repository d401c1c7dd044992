"""Per-sample cascade: normalize, draft at 1B, calibrate, escalate to 7B, validate."""

from __future__ import annotations

import datetime as dt
import json
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

from ..calibration import RiskWeights, ThresholdTable, decide, risk_score
from ..domain import (DEFAULT_FAMILY_MAP, BackendCall, DraftBundle, FamilyMapping, Gold, Language,
                      OutputContract, PredictionRecord, Route, Sample, TaskFamily, TaskKey,
                      TraceRecord, ValidatorAction, check_mapping, parse_family)
from ..errors import BackendFailure, ConfigError, SchemaError
from ..validation import ValidationPolicy, check, default_policy, normalize
from .backends import GenerationParams, ModelBackend
from .prompts import PromptBank, build_router_prompt, build_specialist_prompt, default_bank

SYSTEM_POLICIES = {
    "1b_only": "1b_only",
    "7b_only": "7b_only",
    "rule_v2": "rule_v2",
    "cascade_final": "cascade",
    "custom": "cascade",
}


class Clock(Protocol):
    def perf(self) -> float: ...

    def now_iso(self) -> str: ...


class WallClock:
    def perf(self) -> float:
        return time.perf_counter()

    def now_iso(self) -> str:
        return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


class FrozenClock:
    """Clock for reproducible runs: no elapsed time, fixed timestamp."""

    def __init__(self, at: str = "2026-01-01T00:00:00+00:00"):
        self.at = at

    def perf(self) -> float:
        return 0.0

    def now_iso(self) -> str:
        return self.at


@dataclass(frozen=True)
class NormalizedRequest:
    sample_id: str
    task: TaskKey
    family: TaskFamily
    language: Language
    contract: OutputContract
    prompt: str
    gold: Gold = None


def normalize_request(sample: Sample, mapping: FamilyMapping = DEFAULT_FAMILY_MAP) -> NormalizedRequest:
    check_mapping(mapping)
    return NormalizedRequest(sample.sample_id, sample.task, mapping[sample.task], sample.language,
                             sample.contract, sample.prompt, sample.gold)


def parse_router_output(text: str) -> DraftBundle:
    """Parse the router's JSON reply; anything unusable becomes an unparsed (max-risk) bundle."""
    try:
        obj = json.loads(normalize(text))
    except (json.JSONDecodeError, ValueError):
        return DraftBundle.unparsed()
    if not isinstance(obj, dict) or "draft_answer" not in obj:
        return DraftBundle.unparsed()
    conf = obj.get("confidence")
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not (0.0 <= conf <= 1.0):
        return DraftBundle.unparsed()
    answer = obj["draft_answer"]
    if not isinstance(answer, str):
        answer = json.dumps(answer, ensure_ascii=False)
    try:
        family = parse_family(obj["family"]) if obj.get("family") else None
    except SchemaError:
        family = None
    flags = obj.get("flags") if isinstance(obj.get("flags"), dict) else {}
    flags = {str(k): v for k, v in flags.items() if isinstance(v, bool)}
    return DraftBundle(answer, family, float(conf), flags, True)


def draft(request: NormalizedRequest, router: ModelBackend, params: GenerationParams = GenerationParams(),
          bank: Optional[PromptBank] = None) -> DraftBundle:
    """One router call; transport errors propagate, unparsable replies do not."""
    gen = router.generate(build_router_prompt(request, bank or default_bank()), params)
    return parse_router_output(gen.text)


_RULE_V2_KEYWORDS = (
    (TaskFamily.ASSESSMENT, ("grade", "score", "assess", "feedback", "rubric", "评分", "批改", "评价", "打分")),
    (TaskFamily.PLANNING, ("plan", "schedule", "lesson", "outline", "generate", "design", "idea",
                           "计划", "教案", "设计", "出题", "生成", "规划")),
)


def rule_v2_family(prompt: str) -> TaskFamily:
    """Legacy keyword router: first family whose keywords occur in the prompt, else reasoning."""
    low = prompt.lower()
    for family, words in _RULE_V2_KEYWORDS:
        if any(w in low for w in words):
            return family
    return TaskFamily.REASONING


@dataclass(frozen=True)
class SystemConfig:
    system_id: str = "cascade_final"
    thresholds: Optional[ThresholdTable] = None
    weights: RiskWeights = RiskWeights()
    family_map: FamilyMapping = field(default_factory=lambda: dict(DEFAULT_FAMILY_MAP))
    prompt_bank: PromptBank = field(default_factory=default_bank)
    validation: ValidationPolicy = field(default_factory=default_policy)
    router_params: GenerationParams = GenerationParams(max_tokens=1024)
    specialist_params: GenerationParams = GenerationParams(max_tokens=2048)
    retries: int = 1
    draft_conditioning: bool = True
    specialist_prompt: bool = True

    def __post_init__(self):
        if self.system_id not in SYSTEM_POLICIES:
            raise ConfigError(f"unknown system_id {self.system_id!r}; choose from {', '.join(SYSTEM_POLICIES)}")
        if self.policy == "cascade" and self.thresholds is None:
            raise ConfigError("threshold file required for cascade systems")
        check_mapping(self.family_map)

    @property
    def policy(self) -> str:
        return SYSTEM_POLICIES[self.system_id]

    def describe(self) -> dict[str, Any]:
        """Canonical, JSON-able description used for the config digest."""
        return {
            "system_id": self.system_id,
            "policy": self.policy,
            "thresholds": self.thresholds.to_dict()["thresholds"] if self.thresholds else None,
            "weights": [self.weights.w_confidence, self.weights.w_format,
                        self.weights.w_family_mismatch, self.weights.w_parse_fail],
            "family_map": {t.value: self.family_map[t].value for t in TaskKey},
            "prompt_bank": self.prompt_bank.digest,
            "denylist": list(self.validation.denylist),
            "placeholders": list(self.validation.placeholders),
            "router_params": vars(self.router_params),
            "specialist_params": vars(self.specialist_params),
            "retries": self.retries,
            "draft_conditioning": self.draft_conditioning,
            "specialist_prompt": self.specialist_prompt,
        }


class SampleFailure(BackendFailure):
    """Backend failure carrying the partial trace state for the error record."""

    def __init__(self, cause: Exception, route: Optional[Route]):
        super().__init__(str(cause))
        self.route = route


class _Run:
    """Mutable per-sample bookkeeping."""

    def __init__(self, clock: Clock):
        self.clock = clock
        self.calls: list[BackendCall] = []
        self.actions: list[ValidatorAction] = []
        self.stages = {"draft": 0.0, "calibrate": 0.0, "specialist": 0.0, "validate": 0.0}
        self.measured = 0.0

    def call(self, backend: ModelBackend, prompt: str, params: GenerationParams, stage: str, retries: int):
        for attempt in range(retries + 1):
            t0 = self.clock.perf()
            try:
                gen = backend.generate(prompt, params)
            except BackendFailure:
                self.measured += self.clock.perf() - t0
                if attempt == retries:
                    raise
                self.actions.append(ValidatorAction("retry", f"{stage}_transport_failure"))
                continue
            self.measured += self.clock.perf() - t0
            self.calls.append(BackendCall(stage, backend.backend_id, gen.prompt_chars, gen.output_chars, gen.wall_time_s))
            self.stages[stage] += gen.wall_time_s
            return gen
        raise AssertionError("unreachable")

    def timed(self, stage: str, fn, *args, **kwargs):
        t0 = self.clock.perf()
        out = fn(*args, **kwargs)
        dt_ = self.clock.perf() - t0
        self.stages[stage] += dt_
        self.measured += dt_
        return out


def run_sample(request: NormalizedRequest, router: ModelBackend, specialist: ModelBackend,
               config: SystemConfig, clock: Optional[Clock] = None) -> tuple[PredictionRecord, TraceRecord]:
    clock = clock or WallClock()
    run = _Run(clock)
    start = clock.perf()
    policy = config.policy
    draft = DraftBundle.unparsed()
    risk = threshold = None
    calibrated = None
    route: Optional[Route] = None
    final = ""

    def escalate(with_draft: Optional[DraftBundle], family: Optional[TaskFamily] = None) -> str:
        if config.specialist_prompt:
            prompt = build_specialist_prompt(request, with_draft, config.prompt_bank, family)
        else:
            prompt = request.contract.describe() + "\n\n" + request.prompt
        gen = run.call(specialist, prompt, config.specialist_params, "specialist", config.retries)
        outcome = run.timed("validate", check, gen.text, request.contract, config.validation, allow_repair=True)
        run.actions.extend(outcome.actions)
        if outcome.valid and outcome.substantive:
            return outcome.normalized_output
        run.actions.append(ValidatorAction("reject", "empty_output"))
        return ""

    try:
        if policy in ("cascade", "1b_only"):
            gen = run.call(router, build_router_prompt(request, config.prompt_bank),
                           config.router_params, "draft", config.retries)
            draft = parse_router_output(gen.text)
            risk = run.timed("calibrate", risk_score, draft, request.family, config.weights)

        if policy == "cascade":
            decision = run.timed("calibrate", decide, risk, request.task, config.thresholds)
            threshold, calibrated = decision.threshold, decision.route
            route = decision.route
            if route is Route.ACCEPT_1B:
                outcome = run.timed("validate", check, draft.draft_answer, request.contract, config.validation)
                run.actions.extend(outcome.actions)
                if outcome.valid and outcome.substantive:
                    final = outcome.normalized_output
                else:
                    run.actions.append(ValidatorAction("forced_escalation", "escalated"))
                    route = Route.ESCALATE_7B
            if route is Route.ESCALATE_7B:
                final = escalate(draft if config.draft_conditioning else None)
        elif policy == "1b_only":
            route = Route.ACCEPT_1B
            outcome = run.timed("validate", check, draft.draft_answer, request.contract, config.validation,
                                allow_repair=True)
            run.actions.extend(outcome.actions)
            if outcome.valid and outcome.substantive:
                final = outcome.normalized_output
            else:
                run.actions.append(ValidatorAction("reject", "empty_output"))
        elif policy == "7b_only":
            route = Route.ESCALATE_7B
            final = escalate(None)
        else:
            route = Route.ESCALATE_7B
            final = escalate(None, rule_v2_family(request.prompt))
    except BackendFailure as exc:
        raise SampleFailure(exc, route) from exc

    elapsed = clock.perf() - start
    stage_sum = sum(run.stages.values())
    latency = stage_sum + max(0.0, elapsed - run.measured)
    prediction = PredictionRecord(request.sample_id, request.task, request.language, config.system_id,
                                  final, route, latency, clock.now_iso())
    trace = TraceRecord(request.sample_id, draft, risk, threshold, route, calibrated,
                        tuple(run.actions), dict(run.stages), tuple(run.calls))
    return prediction, trace


def error_records(request: NormalizedRequest, config: SystemConfig, exc: Exception,
                  clock: Clock) -> tuple[PredictionRecord, TraceRecord]:
    route = getattr(exc, "route", None)
    message = f"{exc.__class__.__name__}: {exc}"
    pred = PredictionRecord(request.sample_id, request.task, request.language, config.system_id,
                            "", route, 0.0, clock.now_iso(), error=message)
    trace = TraceRecord(request.sample_id, DraftBundle.unparsed(), None, None, route, None,
                        (), {}, (), error=message)
    return pred, trace
