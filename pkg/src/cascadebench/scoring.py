"""Offline metrics recomputed from saved prediction and trace files."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Iterable, Mapping, Optional, Sequence

from .domain import (ContractKind, Language, PredictionRecord, Route, Sample, SummaryReport,
                     TaskKey, TraceRecord, is_closed_form, parse_language, parse_task_key)
from .errors import (EmptyArchive, MalformedLine, MismatchedArchives, MissingGold,
                     OrphanPrediction, SchemaError)
from .jsonl import iter_jsonl
from .validation import ValidationPolicy, substantive, validate_format


@dataclass(frozen=True)
class ScoredRecord:
    sample_id: str
    task: TaskKey
    language: Language
    system_id: str
    q: int
    format_valid: bool
    substantive: bool
    route: Optional[Route]
    latency_s: float
    output_chars: int
    forced_escalation: bool = False
    error: bool = False

    def __post_init__(self):
        if self.q not in (0, 1):
            raise SchemaError("q must be 0 or 1")
        if self.q == 1 and not is_closed_form(self.task) and not self.format_valid:
            raise SchemaError(f"{self.sample_id}: open-form credit without format validity")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "task": self.task.value,
            "language": self.language.value,
            "system_id": self.system_id,
            "q": self.q,
            "format_valid": self.format_valid,
            "substantive": self.substantive,
            "route": self.route.value if self.route else None,
            "latency_s": self.latency_s,
            "output_chars": self.output_chars,
            "forced_escalation": self.forced_escalation,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoredRecord":
        try:
            return cls(
                sample_id=str(d["sample_id"]),
                task=parse_task_key(d["task"]),
                language=parse_language(d["language"]),
                system_id=str(d["system_id"]),
                q=int(d["q"]),
                format_valid=bool(d["format_valid"]),
                substantive=bool(d["substantive"]),
                route=Route(d["route"]) if d.get("route") else None,
                latency_s=float(d["latency_s"]),
                output_chars=int(d["output_chars"]),
                forced_escalation=bool(d.get("forced_escalation", False)),
                error=bool(d.get("error", False)),
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"bad scored record: {exc}") from None


_WS = re.compile(r"\s+")


def normalize_answer(value: Any) -> str:
    """Whitespace- and case-insensitive comparison form; numbers compare by value."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, float)):
        return repr(float(value))
    text = _WS.sub(" ", str(value)).strip().strip("。.").strip().casefold()
    try:
        f = float(text)
    except ValueError:
        return text
    return repr(f) if math.isfinite(f) else text


def _gold_fields(gold: Any) -> Optional[Mapping[str, Any]]:
    if isinstance(gold, Mapping):
        return gold
    if isinstance(gold, str):
        try:
            obj = json.loads(gold)
        except json.JSONDecodeError:
            return None
        return obj if isinstance(obj, Mapping) else None
    return None


def closed_form_match(output: str, sample: Sample) -> bool:
    gold = sample.gold
    contract = sample.contract
    if contract.kind is ContractKind.FIELD_STRUCTURED:
        gold_fields = _gold_fields(gold)
        if gold_fields is None:
            raise MissingGold(f"{sample.sample_id}: field-structured gold must be an object")
        try:
            obj = json.loads(output)
        except json.JSONDecodeError:
            return False
        if not isinstance(obj, dict):
            return False
        fields = contract.required_fields or tuple(gold_fields)
        return all(f in obj and f in gold_fields and normalize_answer(obj[f]) == normalize_answer(gold_fields[f])
                   for f in fields)
    if isinstance(gold, Mapping):
        gold = gold.get("answer")
    return normalize_answer(output) == normalize_answer(gold)


def score_record(prediction: PredictionRecord, sample: Sample, trace: Optional[TraceRecord] = None,
                 policy: Optional[ValidationPolicy] = None) -> ScoredRecord:
    if is_closed_form(sample.task) and sample.gold is None:
        raise MissingGold(f"{sample.sample_id}: closed-form task without gold")
    route = trace.decision if trace is not None else prediction.route
    output_chars = trace.output_chars if trace is not None else len(prediction.final_output)
    forced = trace.forced_escalation if trace is not None else False
    common = dict(sample_id=prediction.sample_id, task=sample.task, language=sample.language,
                  system_id=prediction.system_id, route=route, latency_s=prediction.latency_s,
                  output_chars=output_chars, forced_escalation=forced)
    if prediction.error is not None:
        return ScoredRecord(q=0, format_valid=False, substantive=False, error=True, **common)
    valid, norm = validate_format(prediction.final_output, sample.contract)
    subst = bool(norm) and substantive(norm, sample.contract, policy)
    if is_closed_form(sample.task):
        q = int(valid and closed_form_match(norm, sample))
    else:
        q = int(valid and subst)
    return ScoredRecord(q=q, format_valid=valid, substantive=subst, **common)


def _parse_lines(path, factory):
    out = {}
    for n, obj in iter_jsonl(path):
        try:
            rec = factory(obj)
        except SchemaError as exc:
            raise MalformedLine(path, n, str(exc)) from None
        if rec.sample_id in out:
            raise MalformedLine(path, n, f"duplicate sample_id {rec.sample_id}")
        out[rec.sample_id] = rec
    return out


def load_predictions(path) -> dict[str, PredictionRecord]:
    return _parse_lines(path, PredictionRecord.from_dict)


def load_traces(path) -> dict[str, TraceRecord]:
    return _parse_lines(path, TraceRecord.from_dict)


def rescore_archive(predictions_path, traces_path, gold_pool: Iterable[Sample],
                    policy: Optional[ValidationPolicy] = None, workers: int = 1) -> list[ScoredRecord]:
    """Join predictions to traces by sample_id and score each against the pool, in id order."""
    predictions = load_predictions(predictions_path)
    traces = load_traces(traces_path)
    pool = {s.sample_id: s for s in gold_pool}
    orphans = sorted(set(predictions) - set(pool))
    if orphans:
        raise OrphanPrediction(f"predictions not in the gold pool: {', '.join(orphans[:20])}")
    unpaired = sorted(set(predictions) ^ set(traces))
    if unpaired:
        raise SchemaError(f"predictions and traces are not paired: {', '.join(unpaired[:20])}")
    for sid, pred in predictions.items():
        if pred.route is not None and traces[sid].decision is not None and pred.route is not traces[sid].decision:
            raise SchemaError(f"{sid}: prediction route {pred.route.value} disagrees with trace")

    ids = sorted(predictions)

    def one(sid: str) -> ScoredRecord:
        return score_record(predictions[sid], pool[sid], traces[sid], policy)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, ids))
    return [one(sid) for sid in ids]


def _rate(records: Sequence[ScoredRecord], route: Route) -> float:
    return sum(1 for r in records if r.route is route) / len(records)


def summarize(records: Sequence[ScoredRecord], traces: Optional[Iterable[TraceRecord]] = None,
              system_id: Optional[str] = None) -> SummaryReport:
    """Aggregate one system's scored records.

    Routing rates and cost come from ``traces`` when given, otherwise from the
    trace-derived fields already on the records. Error records stay in the
    denominator with q=0.
    """
    if not records:
        raise EmptyArchive("no records to summarize")
    records = sorted(records, key=lambda r: r.sample_id)
    if traces is not None:
        by_id = {t.sample_id: t for t in traces}
        records = [_with_trace(r, by_id.get(r.sample_id)) for r in records]
    n = len(records)
    if system_id is None:
        ids = sorted({r.system_id for r in records})
        system_id = ids[0] if len(ids) == 1 else "+".join(ids)
    return SummaryReport(
        system_id=system_id,
        sample_count=n,
        quality=sum(r.q for r in records) / n,
        format_validity=sum(1 for r in records if r.format_valid) / n,
        mean_latency_s=math.fsum(r.latency_s for r in records) / n,
        rate_7b=_rate(records, Route.ESCALATE_7B),
        accept_1b=_rate(records, Route.ACCEPT_1B),
        cost_proxy=sum(r.output_chars for r in records),
    )


def _with_trace(r: ScoredRecord, t: Optional[TraceRecord]) -> ScoredRecord:
    if t is None:
        return r
    d = r.to_dict()
    d["route"] = t.decision.value if t.decision else None
    d["output_chars"] = t.output_chars
    return ScoredRecord.from_dict(d)


@dataclass(frozen=True)
class TaskRow:
    task: TaskKey
    sample_count: int
    quality: float
    accept_1b: float
    rate_7b: float


def per_task_breakdown(records: Sequence[ScoredRecord], traces: Optional[Iterable[TraceRecord]] = None) -> dict[TaskKey, TaskRow]:
    if traces is not None:
        by_id = {t.sample_id: t for t in traces}
        records = [_with_trace(r, by_id.get(r.sample_id)) for r in records]
    groups: dict[TaskKey, list[ScoredRecord]] = defaultdict(list)
    for r in records:
        groups[r.task].append(r)
    out = {}
    for task in TaskKey:
        g = groups.get(task)
        if not g:
            continue
        out[task] = TaskRow(task, len(g), sum(r.q for r in g) / len(g),
                            _rate(g, Route.ACCEPT_1B), _rate(g, Route.ESCALATE_7B))
    return out


def round_half_up(x: float, places: int) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def fmt_fixed(x: float, places: int) -> str:
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def fmt_pct(x: float) -> str:
    return fmt_fixed(100.0 * x, 1) + "%"


def quality_delta(system_records: Sequence[ScoredRecord], baseline_records: Sequence[ScoredRecord]) -> dict[TaskKey, float]:
    """Per-task quality(system) - quality(baseline), rounded half-up to 3 decimals."""
    a = Counter(r.sample_id for r in system_records)
    b = Counter(r.sample_id for r in baseline_records)
    if a != b:
        raise MismatchedArchives((a - b).keys(), (b - a).keys())
    sys_rows = per_task_breakdown(system_records)
    base_rows = per_task_breakdown(baseline_records)
    return {t: round_half_up(sys_rows[t].quality - base_rows[t].quality, 3) for t in sys_rows}


@dataclass(frozen=True)
class FrontierPoint:
    system_id: str
    mean_latency_s: float
    quality: float
    dominated: bool = False
    dominated_by: tuple[str, ...] = ()


def frontier(summaries: Sequence[SummaryReport]) -> list[FrontierPoint]:
    """Latency/quality points; a point is dominated if another is strictly faster and strictly better."""
    out = []
    for s in summaries:
        by = tuple(o.system_id for o in summaries
                   if o.mean_latency_s < s.mean_latency_s and o.quality > s.quality)
        out.append(FrontierPoint(s.system_id, s.mean_latency_s, s.quality, bool(by), by))
    return out


TABLE_COLUMNS = ("system", "samples", "quality", "format", "latency_s", "rate_7b", "accept_1b", "cost_proxy")


def _row(s: SummaryReport) -> list[str]:
    return [s.system_id, str(s.sample_count), fmt_fixed(s.quality, 3), fmt_fixed(s.format_validity, 3),
            fmt_fixed(s.mean_latency_s, 2), fmt_fixed(s.rate_7b, 3), fmt_fixed(s.accept_1b, 3), str(s.cost_proxy)]


def _csv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _aligned(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = []
    for i, r in enumerate([list(header)] + [list(x) for x in rows]):
        cells = [str(c).ljust(w) if j == 0 else str(c).rjust(w) for j, (c, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def compare_table(summaries: Sequence[SummaryReport], fmt: str = "csv") -> str:
    """Render summaries in a fixed column order; CSV or aligned text (rates as percentages)."""
    if fmt == "csv":
        return _csv(TABLE_COLUMNS, (_row(s) for s in summaries))
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")
    rows = []
    for s in summaries:
        r = _row(s)
        r[5], r[6] = fmt_pct(s.rate_7b), fmt_pct(s.accept_1b)
        rows.append(r)
    return _aligned(TABLE_COLUMNS, rows)


def breakdown_csv(rows: Mapping[TaskKey, TaskRow]) -> str:
    return _csv(("task", "samples", "quality", "accept_1b", "rate_7b"),
                ([t.value, str(r.sample_count), fmt_fixed(r.quality, 3), fmt_fixed(r.accept_1b, 3),
                  fmt_fixed(r.rate_7b, 3)] for t, r in rows.items()))


def deltas_csv(deltas: Mapping[TaskKey, float]) -> str:
    return _csv(("task", "delta"), ([t.value, f"{d:+.3f}"] for t, d in deltas.items()))


def frontier_csv(points: Sequence[FrontierPoint]) -> str:
    return _csv(("system", "latency_s", "quality", "dominated", "dominated_by"),
                ([p.system_id, fmt_fixed(p.mean_latency_s, 2), fmt_fixed(p.quality, 3),
                  str(p.dominated).lower(), ";".join(p.dominated_by)] for p in points))
