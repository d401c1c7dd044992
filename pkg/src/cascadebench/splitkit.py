"""Deterministic stratified dev/test splits and their frozen file form.

File layout (UTF-8, ``\\n`` line endings)::

    seed=42
    dev_fraction=0.1
    digest=<sha256 hex>
    stratum=qa:zh<TAB>dev=1<TAB>test=9
    ...
    <sample_id><TAB>dev|test      (sorted by sample_id)

The digest covers every line except the digest line itself.
"""

from __future__ import annotations

import enum
import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .domain import Language, Sample, TaskKey, parse_language, parse_task_key
from .errors import (BadFraction, DigestMismatch, DuplicateSampleId, EmptyPool,
                     IoFailure, SchemaError)

Stratum = tuple[TaskKey, Language]


class Split(str, enum.Enum):
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    dev_fraction: float
    entries: dict[str, Split]
    strata_counts: dict[Stratum, tuple[int, int]]

    def ids(self, split: Split) -> list[str]:
        return sorted(k for k, v in self.entries.items() if v is split)

    @property
    def dev_count(self) -> int:
        return sum(1 for v in self.entries.values() if v is Split.DEV)

    @property
    def test_count(self) -> int:
        return len(self.entries) - self.dev_count


@dataclass
class VerificationReport:
    unassigned: list[str] = field(default_factory=list)
    unknown: list[str] = field(default_factory=list)
    stratum_violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.unassigned or self.unknown or self.stratum_violations)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "unassigned": self.unassigned, "unknown": self.unknown,
                "stratum_violations": self.stratum_violations}


def dev_quota(dev_fraction: float, n: int) -> int:
    # exact decimal arithmetic: 0.29 * 100 must give 29, not 28
    return math.floor(Fraction(repr(float(dev_fraction))) * n)


def _stratum_seed(seed: int, task: TaskKey, language: Language) -> bytes:
    return hashlib.sha256(f"{seed}\x1f{task.value}\x1f{language.value}".encode()).digest()


def _rank_key(stratum_seed: bytes, sample_id: str) -> bytes:
    return hashlib.sha256(stratum_seed + sample_id.encode("utf-8")).digest()


def _check_fraction(dev_fraction: float) -> None:
    if not (0.0 < dev_fraction < 1.0) or math.isnan(dev_fraction):
        raise BadFraction(f"dev_fraction must lie in (0, 1), got {dev_fraction}")


def stratify(pool: Iterable[Sample]) -> dict[Stratum, list[str]]:
    strata: dict[Stratum, list[str]] = defaultdict(list)
    for s in pool:
        strata[(s.task, s.language)].append(s.sample_id)
    return strata


def stratified_split(pool: Sequence[Sample], seed: int = 42, dev_fraction: float = 0.1) -> SplitAssignment:
    """Assign each sample to dev or test.

    Within every (task, language) stratum the ids are ordered by a hash keyed
    on (seed, task, language, sample_id) and the first floor(dev_fraction * n)
    go to dev. Adding a stratum never reshuffles the others.
    """
    if not pool:
        raise EmptyPool("sample pool is empty")
    _check_fraction(dev_fraction)
    ids = [s.sample_id for s in pool]
    if len(set(ids)) != len(ids):
        dup = sorted(i for i, c in Counter(ids).items() if c > 1)
        raise DuplicateSampleId(", ".join(dup[:10]))

    entries: dict[str, Split] = {}
    counts: dict[Stratum, tuple[int, int]] = {}
    for (task, lang), members in sorted(stratify(pool).items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        key = _stratum_seed(seed, task, lang)
        ordered = sorted(sorted(members), key=lambda sid: _rank_key(key, sid))
        k = dev_quota(dev_fraction, len(ordered))
        for i, sid in enumerate(ordered):
            entries[sid] = Split.DEV if i < k else Split.TEST
        counts[(task, lang)] = (k, len(ordered) - k)
    return SplitAssignment(seed, float(dev_fraction), dict(sorted(entries.items())), counts)


def _body_lines(a: SplitAssignment) -> list[str]:
    lines = [f"seed={a.seed}", f"dev_fraction={a.dev_fraction!r}"]
    for (task, lang), (dev, test) in sorted(a.strata_counts.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        lines.append(f"stratum={task.value}:{lang.value}\tdev={dev}\ttest={test}")
    for sid in sorted(a.entries):
        lines.append(f"{sid}\t{a.entries[sid].value}")
    return lines


def _digest(lines: list[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def render_assignment(a: SplitAssignment) -> str:
    body = _body_lines(a)
    lines = body[:2] + [f"digest={_digest(body)}"] + body[2:]
    return "\n".join(lines) + "\n"


def freeze_assignment(a: SplitAssignment, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(render_assignment(a).encode("utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_assignment(path) -> SplitAssignment:
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    header = {}
    body = []
    for line in lines:
        if not line:
            continue
        if line.startswith(("seed=", "dev_fraction=", "digest=")):
            k, v = line.split("=", 1)
            header[k] = v
            if k != "digest":
                body.append(line)
        else:
            body.append(line)
    try:
        seed = int(header["seed"])
        dev_fraction = float(header["dev_fraction"])
        digest = header["digest"]
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: bad assignment header ({exc})") from None

    entries: dict[str, Split] = {}
    counts: dict[Stratum, tuple[int, int]] = {}
    for line in body[2:]:
        if line.startswith("stratum="):
            parts = line[len("stratum="):].split("\t")
            task_s, _, lang_s = parts[0].partition(":")
            fields = dict(p.split("=", 1) for p in parts[1:])
            counts[(parse_task_key(task_s), parse_language(lang_s))] = (int(fields["dev"]), int(fields["test"]))
            continue
        sid, sep, which = line.rpartition("\t")
        if not sep:
            raise SchemaError(f"{path}: malformed entry line {line!r}")
        try:
            entries[sid] = Split(which)
        except ValueError:
            raise SchemaError(f"{path}: bad split label {which!r}") from None

    if _digest(body) != digest:
        raise DigestMismatch(f"{path}: content digest does not match header")
    return SplitAssignment(seed, dev_fraction, dict(sorted(entries.items())), counts)


def verify_assignment(pool: Sequence[Sample], a: SplitAssignment) -> VerificationReport:
    report = VerificationReport()
    pool_ids = {s.sample_id for s in pool}
    report.unassigned = sorted(pool_ids - a.entries.keys())
    report.unknown = sorted(a.entries.keys() - pool_ids)
    for (task, lang), members in sorted(stratify(pool).items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        expected = dev_quota(a.dev_fraction, len(members))
        actual = sum(1 for sid in members if a.entries.get(sid) is Split.DEV)
        if actual != expected:
            report.stratum_violations.append(
                f"{task.value}:{lang.value} dev={actual} expected={expected} (n={len(members)})")
    return report


def subset(pool: Sequence[Sample], a: SplitAssignment, split: Split) -> list[Sample]:
    return [s for s in pool if a.entries.get(s.sample_id) is split]
