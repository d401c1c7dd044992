"""Output-contract checks, scaffold/placeholder rejection and bounded repair."""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .domain import ContractKind, OutputContract, ValidatorAction
from .errors import RepairFailed

ROUTER_KEYS = frozenset({"draft_answer", "family", "confidence", "flags"})

_FENCE_RE = re.compile(r"^```[\w+.-]*[ \t]*\n?(.*?)\s*```$", re.DOTALL)
_OPEN_FENCE_RE = re.compile(r"^```[\w+.-]*[ \t]*\n?")
# characters that count as structure, not content
_MARKUP = set('{}[]"\'`#*>|:,')
_CLOSERS = {"{": "}", "[": "]"}


def _read_list(path) -> tuple[str, ...]:
    if not hasattr(path, "read_text"):
        path = Path(path)
    text = path.read_text(encoding="utf-8")
    return tuple(line.strip().lower() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class ValidationPolicy:
    """Scaffold denylist and placeholder markers, matched case-insensitively."""

    denylist: tuple[str, ...]
    placeholders: tuple[str, ...]
    router_keys: frozenset = field(default=ROUTER_KEYS)

    def __post_init__(self):
        if "draft_answer" not in self.denylist:
            object.__setattr__(self, "denylist", self.denylist + ("draft_answer",))

    @classmethod
    def from_files(cls, denylist_path, placeholders_path) -> "ValidationPolicy":
        return cls(_read_list(denylist_path), _read_list(placeholders_path))


@functools.lru_cache(maxsize=1)
def default_policy() -> ValidationPolicy:
    data = resources.files("cascadebench") / "data"
    return ValidationPolicy(_read_list(data / "denylist.txt"), _read_list(data / "placeholders.txt"))


def _scan(text: str) -> tuple[list[str], bool]:
    """Open-bracket stack and in-string flag after scanning JSON-ish text."""
    stack: list[str] = []
    in_str = False
    esc = False
    for ch in text:
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch in "{[":
            stack.append(ch)
        elif ch in "}]":
            if stack and _CLOSERS.get(stack[-1]) == ch:
                stack.pop()
            else:
                stack.append(ch)
    return stack, in_str


def _excess_closers(text: str) -> bool:
    stack, in_str = _scan(text)
    return not in_str and bool(stack) and stack[-1] in "}]"


def _normalize_once(text: str) -> str:
    t = text.strip()
    m = _FENCE_RE.match(t)
    if m:
        t = m.group(1).strip()
    if t[:1] in ("{", "["):
        while t and t[-1] in "}]" and _excess_closers(t):
            t = t[:-1].rstrip()
    return t


def normalize(text: str) -> str:
    """Trim, strip code fences and drop duplicated trailing braces, to a fixed point."""
    prev = None
    t = text or ""
    while t != prev:
        prev, t = t, _normalize_once(t)
    return t


def _load_object(text: str) -> Optional[Any]:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return None


def validate_format(output: str, contract: OutputContract) -> tuple[bool, str]:
    norm = normalize(output)
    if not norm:
        return False, norm
    if contract.kind is ContractKind.FIELD_STRUCTURED:
        obj = _load_object(norm)
        if not isinstance(obj, dict):
            return False, norm
        return all(f in obj for f in contract.required_fields), norm
    return True, norm


def content_length(text: str) -> int:
    return sum(1 for ch in text if not ch.isspace() and ch not in _MARKUP)


def _only_tokens(text: str, tokens: tuple[str, ...]) -> bool:
    rest = text.lower()
    removed = False
    for tok in sorted(tokens, key=len, reverse=True):
        if tok in rest:
            rest = rest.replace(tok, " ")
            removed = True
    return removed and not any(ch.isalnum() for ch in rest)


def _is_scaffold(obj: Any, router_keys: frozenset, depth: int = 0) -> bool:
    if depth > 8:
        return False
    if isinstance(obj, dict):
        keys = set(obj)
        if keys and keys <= router_keys:
            return True
        if "draft_answer" in keys and len(keys & router_keys) >= 2:
            return True
        return any(_is_scaffold(v, router_keys, depth + 1) for v in obj.values())
    if isinstance(obj, list):
        return any(_is_scaffold(v, router_keys, depth + 1) for v in obj)
    if isinstance(obj, str) and obj.strip()[:1] in ("{", "["):
        return _is_scaffold(_load_object(obj.strip()), router_keys, depth + 1)
    return False


def substantive(output: str, contract: OutputContract, policy: Optional[ValidationPolicy] = None) -> bool:
    """False for scaffolds, leaked router objects, placeholders and too-short content."""
    policy = policy or default_policy()
    text = output.strip()
    if _only_tokens(text, policy.denylist):
        return False
    if text[:1] in ("{", "[") and _is_scaffold(_load_object(text), policy.router_keys):
        return False
    if content_length(text) < contract.min_content_chars:
        return False
    if _only_tokens(text, policy.placeholders):
        return False
    return True


def _strip_fences_loose(text: str) -> str:
    t = text.strip()
    m = _FENCE_RE.match(t)
    if m:
        return m.group(1).strip()
    t = _OPEN_FENCE_RE.sub("", t, count=1) if t.startswith("```") else t
    if t.endswith("```"):
        t = t[:-3]
    return t.strip()


def _close(text: str) -> Optional[str]:
    stack, in_str = _scan(text)
    if any(ch in "}]" for ch in stack):
        return None
    tail = '"' if in_str else ""
    return text + tail + "".join(_CLOSERS[ch] for ch in reversed(stack))


def _comma_positions(text: str) -> list[int]:
    out = []
    in_str = esc = False
    for i, ch in enumerate(text):
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == ",":
            out.append(i)
    return out


def _balance(text: str) -> Optional[str]:
    if isinstance(_load_object(text), (dict, list)):
        return text
    closed = _close(text)
    if closed is not None and isinstance(_load_object(closed), (dict, list)):
        return closed
    for pos in reversed(_comma_positions(text)):
        closed = _close(text[:pos].rstrip())
        if closed is not None and isinstance(_load_object(closed), (dict, list)):
            return closed
    return None


def _fold_fields(text: str, required: tuple[str, ...]) -> str:
    obj = _load_object(text)
    if not isinstance(obj, dict):
        return text
    for name in required:
        if name in obj:
            continue
        variants = [k for k in obj if k.lower() == name.lower()]
        if len(variants) != 1:
            continue
        pattern = re.compile(r'"' + re.escape(variants[0]) + r'"(\s*:)')
        text = pattern.sub(lambda m: f'"{name}"{m.group(1)}', text, count=1)
        obj = _load_object(text)
    return text


def repair(output: str, contract: OutputContract) -> str:
    """Apply bounded, content-free fixes and re-validate; raise RepairFailed otherwise."""
    t = normalize(_strip_fences_loose(output or ""))
    if contract.kind is ContractKind.FIELD_STRUCTURED:
        if t[:1] not in ("{", "["):
            raise RepairFailed("no structure to repair")
        balanced = _balance(t)
        if balanced is None:
            raise RepairFailed("could not balance structural delimiters")
        t = _fold_fields(balanced, contract.required_fields)
    ok, norm = validate_format(t, contract)
    if not ok:
        raise RepairFailed("output still violates its contract after repair")
    return norm


@dataclass
class ValidationOutcome:
    valid: bool
    substantive: bool
    normalized_output: str
    actions: list[ValidatorAction] = field(default_factory=list)


def check(output: str, contract: OutputContract, policy: Optional[ValidationPolicy] = None,
          allow_repair: bool = False) -> ValidationOutcome:
    """Format check, optional repair, then the substantive check."""
    actions = []
    valid, norm = validate_format(output, contract)
    actions.append(ValidatorAction("validate_format", "pass" if valid else "fail"))
    if not valid and allow_repair:
        try:
            norm = repair(output, contract)
            valid = True
            actions.append(ValidatorAction("repair", "repaired"))
        except RepairFailed:
            actions.append(ValidatorAction("repair", "failed"))
    subst = substantive(norm, contract, policy) if norm else False
    actions.append(ValidatorAction("substantive", "pass" if subst else "fail"))
    return ValidationOutcome(valid, subst, norm, actions)
