"""JSON-lines reading and writing shared by every artifact file."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .domain import Sample
from .errors import DuplicateSampleId, IoFailure, MalformedLine, SchemaError


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=False)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(dumps(row))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_no, object)``; blank lines are skipped, bad lines raise MalformedLine."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(path, n, exc.msg) from None
        if not isinstance(obj, dict):
            raise MalformedLine(path, n, "expected a JSON object")
        yield n, obj


def read_jsonl(path) -> list[dict]:
    return [obj for _, obj in iter_jsonl(path)]


def load_pool(path) -> list[Sample]:
    samples = []
    seen = set()
    for n, obj in iter_jsonl(path):
        try:
            s = Sample.from_dict(obj)
        except SchemaError as exc:
            raise MalformedLine(path, n, str(exc)) from None
        if s.sample_id in seen:
            raise DuplicateSampleId(s.sample_id)
        seen.add(s.sample_id)
        samples.append(s)
    return samples


def write_pool(path, samples: Iterable[Sample]) -> None:
    write_jsonl(path, (s.to_dict() for s in samples))
