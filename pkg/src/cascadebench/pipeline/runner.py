"""Run a pool of samples through one system and write the artifact set."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from ..domain import Sample
from ..errors import CascadeError, IoFailure
from ..jsonl import write_jsonl
from ..scoring import score_record, summarize
from .backends import ModelBackend
from .cascade import Clock, SystemConfig, WallClock, error_records, normalize_request, run_sample

logger = logging.getLogger(__name__)

PREDICTIONS = "predictions.jsonl"
TRACES = "traces.jsonl"
SUMMARY = "summary.json"
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class RunManifest:
    system_id: str
    config_digest: str
    counts: dict
    started_at: str
    finished_at: str
    output_dir: str

    def to_dict(self) -> dict:
        return {"system_id": self.system_id, "config_digest": self.config_digest, "counts": self.counts,
                "started_at": self.started_at, "finished_at": self.finished_at, "output_dir": self.output_dir}


def config_digest(config: SystemConfig, backends: Sequence[ModelBackend] = ()) -> str:
    desc = config.describe()
    desc["backends"] = [b.backend_id for b in backends]
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode("utf-8")).hexdigest()


def run_split(pool: Sequence[Sample], config: SystemConfig, output_dir, router: ModelBackend,
              specialist: ModelBackend, workers: int = 4, clock: Optional[Clock] = None) -> RunManifest:
    """Process every sample with a bounded worker pool and write sorted artifacts.

    Per-sample failures become records with an ``error`` field; only IO
    failures abort the run.
    """
    clock = clock or WallClock()
    started = clock.now_iso()
    samples = {s.sample_id: s for s in pool}

    def one(sample: Sample):
        request = None
        try:
            request = normalize_request(sample, config.family_map)
            return run_sample(request, router, specialist, config, clock)
        except IoFailure:
            raise
        except CascadeError as exc:
            logger.warning("sample %s failed: %s", sample.sample_id, exc)
            if request is None:
                raise
            return error_records(request, config, exc, clock)

    ordered = sorted(samples.values(), key=lambda s: s.sample_id)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        results = list(ex.map(one, ordered))
    results.sort(key=lambda pt: pt[0].sample_id)

    out = Path(output_dir)
    write_jsonl(out / PREDICTIONS, (p.to_dict() for p, _ in results))
    write_jsonl(out / TRACES, (t.to_dict() for _, t in results))

    scored = [score_record(p, samples[p.sample_id], t, config.validation) for p, t in results]
    summary = summarize(scored, system_id=config.system_id) if scored else None
    failed = sum(1 for p, _ in results if p.error is not None)
    counts = {
        "total": len(results),
        "ok": len(results) - failed,
        "failed": failed,
        "accepted_1b": sum(1 for _, t in results if t.decision is not None and t.decision.value == "1b_accept"),
        "escalated_7b": sum(1 for _, t in results if t.decision is not None and t.decision.value == "7b_escalate"),
        "forced_escalations": sum(1 for _, t in results if t.forced_escalation),
    }
    manifest = RunManifest(config.system_id, config_digest(config, (router, specialist)), counts,
                           started, clock.now_iso(), str(out))
    try:
        if summary is not None:
            (out / SUMMARY).write_text(json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / MANIFEST).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write artifacts under {out}: {exc}") from exc
    return manifest
