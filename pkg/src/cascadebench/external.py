"""Sampled-baseline CSV aggregation, judge-provider probing and cached re-judging."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import httpx

from .errors import (BackendFailure, IoFailure, MalformedCsv, OutOfRangeScore, ProviderBlocked,
                     UnparsableJudgment)
from .openai_compat import auth_headers, chat_completion, join_url
from .scoring import fmt_fixed

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("model", "scenario", "score", "evaluator")
ENV_BASE = "GPT5_API_BASE"
ENV_KEY = "GPT5_API_KEY"
DEFAULT_JUDGE_MODEL = "gpt-5.4"
INCOMPATIBLE_KEY_PREFIXES = ("sk-ant-",)


@dataclass(frozen=True)
class BaselineRow:
    model: str
    scenario: str
    score: float
    evaluator: str = ""
    extra: Mapping[str, str] = field(default_factory=dict)


def _check_score(score: float, row: int) -> None:
    if not (1.0 <= score <= 10.0) or math.isnan(score):
        raise OutOfRangeScore(row, score)


def read_baseline_csv(path) -> tuple[list[BaselineRow], list[str]]:
    """Rows plus the header (extra columns are kept on each row untouched)."""
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in ("model", "scenario", "score") if c not in header]
    if missing:
        raise MalformedCsv(f"{path}: missing columns {', '.join(missing)}")
    rows = []
    for i, rec in enumerate(reader, start=2):
        if None in rec or any(v is None for v in rec.values()):
            raise MalformedCsv(f"{path}:{i}: wrong number of fields")
        try:
            score = float(rec["score"])
        except ValueError:
            raise MalformedCsv(f"{path}:{i}: score {rec['score']!r} is not a number") from None
        _check_score(score, i)
        extra = {k: v for k, v in rec.items() if k not in CSV_COLUMNS}
        rows.append(BaselineRow(rec["model"], rec["scenario"], score, rec.get("evaluator") or "", extra))
    return rows, list(header)


def render_baseline_csv(rows: Iterable[BaselineRow], header: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        base = {"model": r.model, "scenario": r.scenario, "score": repr(float(r.score)), "evaluator": r.evaluator}
        w.writerow([base[c] if c in base else r.extra.get(c, "") for c in header])
    return buf.getvalue()


@dataclass(frozen=True)
class BaselineTable:
    scenarios: tuple[str, ...]
    means: Mapping[str, Mapping[str, float]]
    averages: Mapping[str, float]
    ranking: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"scenarios": list(self.scenarios),
                "models": [{"model": m, "average": self.averages[m], "scenarios": dict(self.means[m])}
                           for m in self.ranking]}

    def render(self, fmt: str = "csv") -> str:
        header = ["model", "average", *self.scenarios]
        rows = [[m, fmt_fixed(self.averages[m], 2),
                 *(fmt_fixed(self.means[m][s], 2) if s in self.means[m] else "" for s in self.scenarios)]
                for m in self.ranking]
        if fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
            return buf.getvalue()
        widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
        lines = ["  ".join(str(c).ljust(w) if j == 0 else str(c).rjust(w)
                           for j, (c, w) in enumerate(zip(r, widths))).rstrip() for r in [header, *rows]]
        return "\n".join(lines) + "\n"


def aggregate_rows(rows: Iterable[BaselineRow]) -> BaselineTable:
    sums: dict[str, dict[str, list[float]]] = {}
    scenarios: list[str] = []
    for r in rows:
        sums.setdefault(r.model, {}).setdefault(r.scenario, []).append(r.score)
        if r.scenario not in scenarios:
            scenarios.append(r.scenario)
    means = {m: {s: math.fsum(v) / len(v) for s, v in sc.items()} for m, sc in sums.items()}
    averages = {m: math.fsum(sc.values()) / len(sc) for m, sc in means.items()}
    ranking = tuple(sorted(averages, key=lambda m: (-averages[m], m)))
    return BaselineTable(tuple(scenarios), means, averages, ranking)


def aggregate_baselines(csv_path) -> BaselineTable:
    """Mean score per (model, scenario); a model's average is the mean of its scenario means."""
    rows, _ = read_baseline_csv(csv_path)
    return aggregate_rows(rows)


class ProviderState(str, enum.Enum):
    OK = "ok"
    ENDPOINT_MISSING = "endpoint_missing"
    KEY_SHAPE_MISMATCH = "key_shape_mismatch"
    NETWORK_ERROR = "network_error"


@dataclass(frozen=True)
class ProviderStatus:
    state: ProviderState
    detail: Mapping[str, Optional[int]]
    key_shape_ok: bool
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.state is ProviderState.OK

    def to_dict(self) -> dict:
        return {"status": self.state.value, "endpoints": dict(self.detail),
                "key_shape_ok": self.key_shape_ok, "message": self.message}


def key_shape_ok(api_key: Optional[str], bad_prefixes: Sequence[str] = INCOMPATIBLE_KEY_PREFIXES) -> bool:
    return not (api_key and any(api_key.startswith(p) for p in bad_prefixes))


def probe_provider(base_url: str, api_key: Optional[str], model: str = DEFAULT_JUDGE_MODEL,
                   client: Optional[httpx.Client] = None, timeout_s: float = 10.0) -> ProviderStatus:
    """Probe /models, /chat/completions and /responses and classify the provider.

    Precedence: transport failure, then any 404, then an incompatible key
    prefix. Never raises for HTTP outcomes.
    """
    own = client is None
    client = client or httpx.Client(timeout=timeout_s)
    headers = auth_headers(api_key)
    probes = (
        ("/models", "GET", None),
        ("/chat/completions", "POST", {"model": model, "messages": [{"role": "user", "content": "ping"}],
                                       "max_tokens": 1}),
        ("/responses", "POST", {"model": model, "input": "ping", "max_output_tokens": 16}),
    )
    detail: dict[str, Optional[int]] = {}
    shape_ok = key_shape_ok(api_key)
    try:
        for path, method, body in probes:
            try:
                resp = client.request(method, join_url(base_url, path), json=body, headers=headers)
            except httpx.HTTPError as exc:
                detail[path] = None
                return ProviderStatus(ProviderState.NETWORK_ERROR, detail, shape_ok,
                                      f"{path}: {exc.__class__.__name__}: {exc}")
            detail[path] = resp.status_code
    finally:
        if own:
            client.close()
    if any(code == 404 for code in detail.values()):
        missing = ", ".join(p for p, c in detail.items() if c == 404)
        return ProviderStatus(ProviderState.ENDPOINT_MISSING, detail, shape_ok, f"404 from {missing}")
    if not shape_ok:
        return ProviderStatus(ProviderState.KEY_SHAPE_MISMATCH, detail, shape_ok,
                              "api key prefix does not match an OpenAI-compatible provider")
    return ProviderStatus(ProviderState.OK, detail, shape_ok)


def cache_key(judge_model: str, sample_id: str, response: str, rubric_version: str) -> str:
    response_digest = hashlib.sha256(response.encode("utf-8")).hexdigest()
    payload = json.dumps([judge_model, sample_id, response_digest, rubric_version], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class JudgeCacheEntry:
    key: str
    score: float
    raw_judge_output: str


class JudgeCache:
    """Append-only JSON-lines store; lookups are exact-key, first write wins."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, JudgeCacheEntry] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    entry = JudgeCacheEntry(d["key"], float(d["score"]), d.get("raw_judge_output", ""))
                except (json.JSONDecodeError, KeyError, ValueError):
                    logger.warning("skipping corrupt judge cache line in %s", self.path)
                    continue
                self._entries.setdefault(entry.key, entry)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[JudgeCacheEntry]:
        return self._entries.get(key)

    def put(self, entry: JudgeCacheEntry) -> JudgeCacheEntry:
        with self._lock:
            existing = self._entries.get(entry.key)
            if existing is not None:
                return existing
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": entry.key, "score": entry.score,
                                         "raw_judge_output": entry.raw_judge_output}, ensure_ascii=False) + "\n")
            except OSError as exc:
                raise IoFailure(f"cannot append to judge cache {self.path}: {exc}") from exc
            self._entries[entry.key] = entry
            return entry


_SCORE_LINE = re.compile(r"^\s*\**\s*score\s*\**\s*[:：]\s*\**\s*(\d+(?:\.\d+)?)", re.IGNORECASE | re.MULTILINE)
_NUMBER = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?)(?![\w.]|\.\d)")


def parse_judge_score(reply: str) -> float:
    """Score from a 'Score:' line if present, else the first standalone number in [1, 10]."""
    for m in _SCORE_LINE.finditer(reply):
        v = float(m.group(1))
        if 1.0 <= v <= 10.0:
            return v
    for m in _NUMBER.finditer(reply):
        v = float(m.group(1))
        if 1.0 <= v <= 10.0:
            return v
    raise UnparsableJudgment(f"no score in judge reply: {reply[:80]!r}")


DEFAULT_RUBRIC = (
    "You are grading an educational assistant's response on a 1-to-10 scale.\n"
    "Consider correctness, pedagogical usefulness, and instruction following.\n"
    "Scenario: {scenario}\n\nQuestion:\n{question}\n\nResponse:\n{response}\n\n"
    "Reply with a line of the form 'Score: <1-10>' followed by a short justification."
)


@dataclass(frozen=True)
class JudgeConfig:
    base_url: str
    api_key: Optional[str]
    model: str = DEFAULT_JUDGE_MODEL
    rubric: str = DEFAULT_RUBRIC
    rubric_version: str = "v1"
    concurrency: int = 4
    max_retries: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 60.0

    @classmethod
    def from_env(cls, base_url: Optional[str] = None, api_key: Optional[str] = None, **kwargs) -> "JudgeConfig":
        base = base_url or os.environ.get(ENV_BASE)
        if not base:
            raise ProviderBlocked(f"no judge base URL (pass --base-url or set {ENV_BASE})")
        return cls(base, api_key if api_key is not None else os.environ.get(ENV_KEY), **kwargs)


@dataclass(frozen=True)
class JudgeResponse:
    sample_id: str
    model: str
    scenario: str
    response: str
    question: str = ""

    @classmethod
    def from_dict(cls, d: Mapping) -> "JudgeResponse":
        return cls(str(d["sample_id"]), str(d["model"]), str(d["scenario"]), str(d["response"]),
                   str(d.get("question", "")))


@dataclass
class RejudgeResult:
    rows: list[BaselineRow]
    failures: list[tuple[str, str]]
    network_calls: int
    cache_hits: int

    def csv(self) -> str:
        return render_baseline_csv(self.rows)


def rejudge(responses: Sequence[JudgeResponse], config: JudgeConfig, cache: JudgeCache, *,
            force: bool = False, client: Optional[httpx.Client] = None,
            probe: Callable[..., ProviderStatus] = probe_provider,
            sleep: Callable[[float], None] = time.sleep) -> RejudgeResult:
    """Score each response with the judge, reusing cached verdicts.

    The provider is probed only when at least one response misses the cache,
    so a fully warm rerun touches no network at all. Output rows keep input
    order; unparsable replies are reported per row and skipped.
    """
    keys = [cache_key(config.model, r.sample_id, r.response, config.rubric_version) for r in responses]
    misses = [i for i, k in enumerate(keys) if cache.get(k) is None]
    own = client is None and bool(misses)
    client = client or (httpx.Client(timeout=config.timeout_s) if misses else None)
    calls = 0
    calls_lock = threading.Lock()
    try:
        if misses and not force:
            status = probe(config.base_url, config.api_key, config.model, client=client)
            if not status.ok:
                raise ProviderBlocked(f"judge provider not usable: {status.state.value} ({status.message})")

        def judge(i: int):
            nonlocal calls
            r = responses[i]
            prompt = config.rubric.format(scenario=r.scenario, question=r.question, response=r.response)
            with calls_lock:
                calls += 1
            reply = chat_completion(client, config.base_url, config.api_key, config.model,
                                    [{"role": "user", "content": prompt}], max_tokens=512, temperature=0.0,
                                    max_retries=config.max_retries, backoff_s=config.backoff_s, sleep=sleep)
            score = parse_judge_score(reply)
            cache.put(JudgeCacheEntry(keys[i], score, reply))

        failures: list[tuple[str, str]] = []
        if misses:
            with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as ex:
                futures = {i: ex.submit(judge, i) for i in misses}
            for i, fut in futures.items():
                exc = fut.exception()
                if isinstance(exc, (UnparsableJudgment, BackendFailure)):
                    failures.append((responses[i].sample_id, f"{exc.__class__.__name__}: {exc}"))
                elif exc is not None:
                    raise exc
    finally:
        if own and client is not None:
            client.close()

    rows = []
    for r, k in zip(responses, keys):
        entry = cache.get(k)
        if entry is not None:
            rows.append(BaselineRow(r.model, r.scenario, entry.score, config.model))
    return RejudgeResult(rows, sorted(failures), calls, len(responses) - len(misses))
