"""Task taxonomy, request/record schemas and the shared value types."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Union

from .errors import MappingIncomplete, SchemaError, UnknownLanguage, UnknownTask


class TaskKey(str, enum.Enum):
    QA = "qa"
    AG = "ag"
    EC = "ec"
    IP = "ip"
    PCC = "pcc"
    PLS = "pls"
    QG = "qg"
    TMG = "tmg"

    @property
    def display(self) -> str:
        return "Q&A" if self is TaskKey.QA else self.name

    def __str__(self) -> str:
        return self.value


class TaskFamily(str, enum.Enum):
    REASONING = "reasoning"
    ASSESSMENT = "assessment"
    PLANNING = "planning"

    def __str__(self) -> str:
        return self.value


class Language(str, enum.Enum):
    ZH = "zh"
    EN = "en"

    def __str__(self) -> str:
        return self.value


class ContractKind(str, enum.Enum):
    EXACT_ANSWER = "exact_answer"
    FIELD_STRUCTURED = "field_structured"
    OPEN_FORM = "open_form"


class Route(str, enum.Enum):
    ACCEPT_1B = "1b_accept"
    ESCALATE_7B = "7b_escalate"

    def __str__(self) -> str:
        return self.value


CLOSED_FORM_TASKS = frozenset({TaskKey.QA, TaskKey.AG, TaskKey.EC})
OPEN_FORM_TASKS = frozenset(TaskKey) - CLOSED_FORM_TASKS

FamilyMapping = Mapping[TaskKey, TaskFamily]

# Not stated by the source material; exposed as configuration.
DEFAULT_FAMILY_MAP: dict[TaskKey, TaskFamily] = {
    TaskKey.QA: TaskFamily.REASONING,
    TaskKey.EC: TaskFamily.REASONING,
    TaskKey.AG: TaskFamily.ASSESSMENT,
    TaskKey.PCC: TaskFamily.ASSESSMENT,
    TaskKey.IP: TaskFamily.PLANNING,
    TaskKey.PLS: TaskFamily.PLANNING,
    TaskKey.QG: TaskFamily.PLANNING,
    TaskKey.TMG: TaskFamily.PLANNING,
}

_TASK_ALIASES = {"q&a": TaskKey.QA, "q & a": TaskKey.QA}


def parse_task_key(text: str) -> TaskKey:
    """Parse a task key case-insensitively; ``"Q&A"`` and ``"qa"`` both give QA."""
    if isinstance(text, TaskKey):
        return text
    norm = str(text).strip().lower()
    if norm in _TASK_ALIASES:
        return _TASK_ALIASES[norm]
    try:
        return TaskKey(norm)
    except ValueError:
        raise UnknownTask(f"unknown task key: {text!r}") from None


def parse_family(text: str) -> TaskFamily:
    if isinstance(text, TaskFamily):
        return text
    try:
        return TaskFamily(str(text).strip().lower())
    except ValueError:
        raise SchemaError(f"unknown task family: {text!r}") from None


def parse_language(text: str) -> Language:
    if isinstance(text, Language):
        return text
    try:
        return Language(str(text).strip().lower())
    except ValueError:
        raise UnknownLanguage(f"unknown language tag: {text!r}") from None


def check_mapping(mapping: FamilyMapping) -> None:
    missing = [t.value for t in TaskKey if t not in mapping]
    if missing:
        raise MappingIncomplete(missing)


def family_of(task: TaskKey, mapping: FamilyMapping = DEFAULT_FAMILY_MAP) -> TaskFamily:
    check_mapping(mapping)
    return mapping[task]


def parse_family_mapping(raw: Mapping[str, str]) -> dict[TaskKey, TaskFamily]:
    """Build a mapping from ``{"qa": "reasoning", ...}``; must cover all eight tasks."""
    mapping = {parse_task_key(k): parse_family(v) for k, v in raw.items()}
    check_mapping(mapping)
    return mapping


def is_closed_form(task: TaskKey) -> bool:
    return task in CLOSED_FORM_TASKS


@dataclass(frozen=True)
class OutputContract:
    kind: ContractKind
    required_fields: tuple[str, ...] = ()
    min_content_chars: int = 1

    def __post_init__(self):
        if self.min_content_chars < 0:
            raise SchemaError("min_content_chars must be nonnegative")
        if self.kind is not ContractKind.FIELD_STRUCTURED and self.required_fields:
            raise SchemaError("required_fields only apply to field_structured contracts")

    def describe(self) -> str:
        if self.kind is ContractKind.FIELD_STRUCTURED:
            return "Respond with a JSON object containing fields: " + ", ".join(self.required_fields)
        if self.kind is ContractKind.EXACT_ANSWER:
            return "Respond with the exact final answer only."
        return f"Respond with a complete answer of at least {self.min_content_chars} characters."

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "required_fields": list(self.required_fields),
            "min_content_chars": self.min_content_chars,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OutputContract":
        try:
            return cls(
                kind=ContractKind(d["kind"]),
                required_fields=tuple(d.get("required_fields") or ()),
                min_content_chars=int(d.get("min_content_chars", 1)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"bad contract: {exc}") from None


def default_contract(task: TaskKey) -> OutputContract:
    if task is TaskKey.AG:
        return OutputContract(ContractKind.FIELD_STRUCTURED, ("score",), 1)
    if task is TaskKey.EC:
        return OutputContract(ContractKind.FIELD_STRUCTURED, ("corrected",), 1)
    if task is TaskKey.QA:
        return OutputContract(ContractKind.EXACT_ANSWER, (), 1)
    return OutputContract(ContractKind.OPEN_FORM, (), 40)


Gold = Union[str, Mapping[str, Any], None]


@dataclass(frozen=True)
class Sample:
    sample_id: str
    task: TaskKey
    language: Language
    prompt: str
    gold: Gold = None
    contract: OutputContract = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.contract is None:
            object.__setattr__(self, "contract", default_contract(self.task))
        closed = self.contract.kind is not ContractKind.OPEN_FORM
        if closed != is_closed_form(self.task):
            raise SchemaError(f"{self.sample_id}: contract kind {self.contract.kind.value} "
                              f"does not fit task {self.task.value}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "task": self.task.value,
            "language": self.language.value,
            "prompt": self.prompt,
            "gold": self.gold,
            "contract": self.contract.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Sample":
        try:
            task = parse_task_key(d["task"])
            contract = d.get("contract")
            return cls(
                sample_id=str(d["sample_id"]),
                task=task,
                language=parse_language(d["language"]),
                prompt=str(d.get("prompt", "")),
                gold=d.get("gold"),
                contract=OutputContract.from_dict(contract) if contract else default_contract(task),
            )
        except KeyError as exc:
            raise SchemaError(f"sample missing field {exc}") from None


@dataclass(frozen=True)
class DraftBundle:
    draft_answer: str
    predicted_family: Optional[TaskFamily]
    confidence: float
    format_signals: Mapping[str, bool] = field(default_factory=dict)
    parse_ok: bool = True

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0) or math.isnan(self.confidence):
            raise SchemaError(f"confidence {self.confidence} outside [0, 1]")
        if not self.parse_ok and self.confidence != 0.0:
            raise SchemaError("unparsed drafts must carry confidence 0")

    @classmethod
    def unparsed(cls) -> "DraftBundle":
        return cls("", None, 0.0, {}, False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "draft_answer": self.draft_answer,
            "family": self.predicted_family.value if self.predicted_family else None,
            "confidence": self.confidence,
            "flags": dict(self.format_signals),
            "parse_ok": self.parse_ok,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DraftBundle":
        fam = d.get("family")
        return cls(
            draft_answer=d.get("draft_answer", ""),
            predicted_family=parse_family(fam) if fam else None,
            confidence=float(d.get("confidence", 0.0)),
            format_signals={str(k): bool(v) for k, v in (d.get("flags") or {}).items()},
            parse_ok=bool(d.get("parse_ok", False)),
        )


@dataclass(frozen=True)
class RouteDecision:
    route: Route
    risk: float
    threshold: float

    def __post_init__(self):
        expected = Route.ACCEPT_1B if self.risk < self.threshold else Route.ESCALATE_7B
        if self.route is not expected:
            raise SchemaError(f"route {self.route.value} inconsistent with risk "
                              f"{self.risk} / threshold {self.threshold}")

    @classmethod
    def from_risk(cls, risk: float, threshold: float) -> "RouteDecision":
        route = Route.ACCEPT_1B if risk < threshold else Route.ESCALATE_7B
        return cls(route, risk, threshold)


@dataclass(frozen=True)
class ValidatorAction:
    action: str
    outcome: str

    def to_dict(self) -> dict[str, str]:
        return {"action": self.action, "outcome": self.outcome}


@dataclass(frozen=True)
class BackendCall:
    """One model invocation, as recorded in a trace."""

    stage: str
    backend_id: str
    prompt_chars: int
    output_chars: int
    wall_time_s: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "backend_id": self.backend_id,
            "prompt_chars": self.prompt_chars,
            "output_chars": self.output_chars,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BackendCall":
        return cls(d["stage"], d["backend_id"], int(d["prompt_chars"]),
                   int(d["output_chars"]), float(d["wall_time_s"]))


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    task: TaskKey
    language: Language
    system_id: str
    final_output: str
    route: Optional[Route]
    latency_s: float
    created_at: str
    error: Optional[str] = None

    def __post_init__(self):
        if self.latency_s < 0:
            raise SchemaError(f"{self.sample_id}: negative latency")

    def to_dict(self) -> dict[str, Any]:
        d = {
            "sample_id": self.sample_id,
            "task": self.task.value,
            "language": self.language.value,
            "system_id": self.system_id,
            "final_output": self.final_output,
            "route": self.route.value if self.route else None,
            "latency_s": self.latency_s,
            "created_at": self.created_at,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PredictionRecord":
        try:
            return cls(
                sample_id=str(d["sample_id"]),
                task=parse_task_key(d["task"]),
                language=parse_language(d["language"]),
                system_id=str(d["system_id"]),
                final_output=str(d.get("final_output", "")),
                route=Route(d["route"]) if d.get("route") else None,
                latency_s=float(d["latency_s"]),
                created_at=str(d.get("created_at", "")),
                error=d.get("error"),
            )
        except KeyError as exc:
            raise SchemaError(f"prediction missing field {exc}") from None
        except ValueError as exc:
            raise SchemaError(str(exc)) from None


STAGES = ("draft", "calibrate", "specialist", "validate")


@dataclass(frozen=True)
class TraceRecord:
    """Per-sample routing trace.

    ``decision`` is the final route (forced escalations count as 7B);
    ``calibrated_decision`` is what the risk/threshold comparison said.
    """

    sample_id: str
    draft: DraftBundle
    risk: Optional[float]
    threshold: Optional[float]
    decision: Optional[Route]
    calibrated_decision: Optional[Route] = None
    validator_actions: tuple[ValidatorAction, ...] = ()
    stage_latencies_s: Mapping[str, float] = field(default_factory=dict)
    calls: tuple[BackendCall, ...] = ()
    error: Optional[str] = None

    @property
    def forced_escalation(self) -> bool:
        return any(a.action == "forced_escalation" for a in self.validator_actions)

    @property
    def output_chars(self) -> int:
        return sum(c.output_chars for c in self.calls)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "sample_id": self.sample_id,
            "draft": self.draft.to_dict(),
            "risk": self.risk,
            "threshold": self.threshold,
            "decision": self.decision.value if self.decision else None,
            "calibrated_decision": self.calibrated_decision.value if self.calibrated_decision else None,
            "validator_actions": [a.to_dict() for a in self.validator_actions],
            "stage_latencies_s": {s: self.stage_latencies_s.get(s, 0.0) for s in STAGES},
            "calls": [c.to_dict() for c in self.calls],
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TraceRecord":
        try:
            return cls(
                sample_id=str(d["sample_id"]),
                draft=DraftBundle.from_dict(d.get("draft") or {}),
                risk=None if d.get("risk") is None else float(d["risk"]),
                threshold=None if d.get("threshold") is None else float(d["threshold"]),
                decision=Route(d["decision"]) if d.get("decision") else None,
                calibrated_decision=(Route(d["calibrated_decision"])
                                     if d.get("calibrated_decision") else None),
                validator_actions=tuple(ValidatorAction(a["action"], a["outcome"])
                                        for a in d.get("validator_actions") or ()),
                stage_latencies_s={k: float(v) for k, v in (d.get("stage_latencies_s") or {}).items()},
                calls=tuple(BackendCall.from_dict(c) for c in d.get("calls") or ()),
                error=d.get("error"),
            )
        except KeyError as exc:
            raise SchemaError(f"trace missing field {exc}") from None
        except ValueError as exc:
            raise SchemaError(str(exc)) from None


@dataclass(frozen=True)
class SummaryReport:
    system_id: str
    sample_count: int
    quality: float
    format_validity: float
    mean_latency_s: float
    rate_7b: float
    accept_1b: float
    cost_proxy: int
    cost_proxy_unit: str = "output_chars"

    def to_dict(self) -> dict[str, Any]:
        return {
            "system_id": self.system_id,
            "sample_count": self.sample_count,
            "quality": self.quality,
            "format_validity": self.format_validity,
            "mean_latency_s": self.mean_latency_s,
            "rate_7b": self.rate_7b,
            "accept_1b": self.accept_1b,
            "cost_proxy": self.cost_proxy,
            "cost_proxy_unit": self.cost_proxy_unit,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SummaryReport":
        try:
            return cls(
                system_id=str(d["system_id"]),
                sample_count=int(d["sample_count"]),
                quality=float(d["quality"]),
                format_validity=float(d["format_validity"]),
                mean_latency_s=float(d["mean_latency_s"]),
                rate_7b=float(d["rate_7b"]),
                accept_1b=float(d["accept_1b"]),
                cost_proxy=int(d["cost_proxy"]),
                cost_proxy_unit=str(d.get("cost_proxy_unit", "output_chars")),
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad summary: {exc}") from None
