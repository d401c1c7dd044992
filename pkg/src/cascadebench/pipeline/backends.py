"""Model backends: the protocol, a deterministic mock and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Protocol, Union

import httpx

from ..domain import DEFAULT_FAMILY_MAP, parse_task_key
from ..errors import BackendFailure, ConfigError, IoFailure, UnknownTask
from ..openai_compat import chat_completion


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int = 42


@dataclass(frozen=True)
class Generation:
    text: str
    prompt_chars: int
    output_chars: int
    wall_time_s: float


class ModelBackend(Protocol):
    backend_id: str

    def generate(self, prompt: str, params: GenerationParams) -> Generation:
        ...


ScriptEntry = Union[str, Mapping[str, object]]


class _Draw:
    """Deterministic uniform draws from a digest."""

    def __init__(self, *parts: object):
        self._seed = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
        self._n = 0

    def uniform(self) -> float:
        block = hashlib.sha256(self._seed + self._n.to_bytes(4, "big")).digest()
        self._n += 1
        return int.from_bytes(block[:8], "big") / 2**64

    def choice(self, seq):
        return seq[min(int(self.uniform() * len(seq)), len(seq) - 1)]


_WORDS_EN = ("students", "practice", "review", "concept", "example", "lesson", "feedback",
             "question", "solution", "explain", "step", "goal", "activity", "reading", "check")
_WORDS_ZH = ("学生", "练习", "复习", "概念", "例题", "课堂", "反馈", "问题", "解答", "步骤",
             "目标", "活动", "阅读", "检查", "讲解")

_TASK_LINE = re.compile(r"^Task:\s*(\S+)", re.MULTILINE)
_FIELDS_LINE = re.compile(r"containing fields:\s*(.+)$", re.MULTILINE)


def _sentence(draw: _Draw, zh: bool, n_words: int) -> str:
    words = [draw.choice(_WORDS_ZH if zh else _WORDS_EN) for _ in range(n_words)]
    return ("".join(words) + "。") if zh else (" ".join(words).capitalize() + ".")


def _is_zh(prompt: str) -> bool:
    return bool(re.search(r"Language:\s*zh", prompt)) or bool(re.search(r"[一-鿿]", prompt))


def _fallback_answer(draw: _Draw, prompt: str) -> str:
    zh = _is_zh(prompt)
    m = _FIELDS_LINE.search(prompt)
    if m:
        fields = [f.strip() for f in m.group(1).split(",") if f.strip()]
        obj = {f: (int(draw.uniform() * 10) + 1 if f == "score" else _sentence(draw, zh, 3)) for f in fields}
        return json.dumps(obj, ensure_ascii=False)
    if "exact final answer" in prompt:
        return str(int(draw.uniform() * 100))
    return " ".join(_sentence(draw, zh, 8) for _ in range(3))


def fallback_router(prompt: str, seed: int) -> str:
    """Router-shaped JSON reply derived from the prompt digest and seed."""
    draw = _Draw("router", seed, prompt)
    m = _TASK_LINE.search(prompt)
    true_family = None
    if m:
        try:
            true_family = DEFAULT_FAMILY_MAP[parse_task_key(m.group(1))]
        except UnknownTask:
            true_family = None
    u = draw.uniform()
    if u < 0.05:
        return "I think the answer is probably fine, let me explain in prose instead."
    families = ("reasoning", "assessment", "planning")
    family = true_family.value if (true_family and draw.uniform() < 0.8) else draw.choice(families)
    answer = "draft_answer" if draw.uniform() < 0.1 else _fallback_answer(draw, prompt)
    return json.dumps({
        "draft_answer": answer,
        "family": family,
        "confidence": round(draw.uniform(), 3),
        "flags": {"schema_ok": draw.uniform() > 0.2, "language_ok": draw.uniform() > 0.1},
    }, ensure_ascii=False)


def fallback_specialist(prompt: str, seed: int) -> str:
    draw = _Draw("specialist", seed, prompt)
    answer = _fallback_answer(draw, prompt)
    u = draw.uniform()
    if answer.startswith("{") and u < 0.1:
        return answer[:-1]
    if u > 0.9:
        return "```\n" + answer + "\n```"
    return answer


_FALLBACKS = {"router": fallback_router, "specialist": fallback_specialist}


class MockBackend:
    """Scripted, network-free backend.

    ``script`` maps a key to a response; the longest key contained in the
    prompt wins. A response is either text or ``{"text": ..., "latency_s": ...}``
    or ``{"fail": reason}`` to simulate a transport failure. Unmatched prompts
    go to a deterministic fallback generator seeded by (prompt, seed).
    """

    def __init__(self, backend_id: str, script: Optional[Mapping[str, ScriptEntry]] = None,
                 role: str = "router", simulated_latency_s: float = 0.0):
        if role not in _FALLBACKS:
            raise ConfigError(f"unknown mock role {role!r}")
        self.backend_id = backend_id
        self.role = role
        self.simulated_latency_s = float(simulated_latency_s)
        self._script = dict(script or {})
        self._keys = sorted(self._script, key=lambda k: (-len(k), k))
        self._lock = threading.Lock()
        self.call_count = 0

    @classmethod
    def from_file(cls, backend_id: str, path, role: str, simulated_latency_s: float = 0.0) -> "MockBackend":
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read mock script {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls(backend_id, script, role, simulated_latency_s)

    def _lookup(self, prompt: str) -> Optional[ScriptEntry]:
        for key in self._keys:
            if key in prompt:
                return self._script[key]
        return None

    def generate(self, prompt: str, params: GenerationParams) -> Generation:
        with self._lock:
            self.call_count += 1
        entry = self._lookup(prompt)
        latency = self.simulated_latency_s
        if entry is None:
            text = _FALLBACKS[self.role](prompt, params.seed)
        elif isinstance(entry, str):
            text = entry
        else:
            if "fail" in entry:
                raise BackendFailure(f"{self.backend_id}: {entry['fail']}")
            text = str(entry.get("text", ""))
            latency = float(entry.get("latency_s", latency))
        return Generation(text, len(prompt), len(text), latency)


class OpenAIChatBackend:
    """Backend for any OpenAI-compatible ``/chat/completions`` server.

    One httpx client per thread, so each worker owns its connection.
    """

    def __init__(self, backend_id: str, base_url: str, model: str, api_key: Optional[str] = None,
                 timeout_s: float = 120.0):
        self.backend_id = backend_id
        self.base_url = base_url
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self._local = threading.local()

    def _client(self) -> httpx.Client:
        client = getattr(self._local, "client", None)
        if client is None:
            client = httpx.Client(timeout=self.timeout_s)
            self._local.client = client
        return client

    def generate(self, prompt: str, params: GenerationParams) -> Generation:
        t0 = time.perf_counter()
        text = chat_completion(self._client(), self.base_url, self.api_key, self.model,
                               [{"role": "user", "content": prompt}],
                               max_tokens=params.max_tokens, temperature=params.temperature,
                               seed=params.seed, max_retries=0)
        return Generation(text, len(prompt), len(text), time.perf_counter() - t0)
