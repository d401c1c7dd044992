"""Risk scoring from router signals and per-task threshold freezing on dev."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .domain import DraftBundle, RouteDecision, TaskFamily, TaskKey, parse_task_key
from .errors import ConfigError, EmptyGrid, IoFailure, SchemaError, ThresholdMissing

DEFAULT_GRID: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))
DEFAULT_QUALITY_FLOOR = 0.6


@dataclass(frozen=True)
class RiskWeights:
    w_confidence: float = 0.4
    w_format: float = 0.2
    w_family_mismatch: float = 0.2
    w_parse_fail: float = 0.2

    def __post_init__(self):
        ws = (self.w_confidence, self.w_format, self.w_family_mismatch, self.w_parse_fail)
        if any(w < 0 or math.isnan(w) for w in ws):
            raise ConfigError("risk weights must be nonnegative")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"risk weights must sum to 1, got {sum(ws)!r}")

    @classmethod
    def parse(cls, text: str) -> "RiskWeights":
        try:
            parts = [float(p) for p in text.replace(" ", "").split(",") if p]
        except ValueError:
            raise ConfigError(f"weights must be numbers, got {text!r}") from None
        if len(parts) != 4:
            raise ConfigError("weights take four comma-separated values")
        return cls(*parts)


def risk_score(bundle: DraftBundle, family: TaskFamily, weights: RiskWeights = RiskWeights()) -> float:
    """Weighted sum of (1 - confidence), failed-flag share, family mismatch and parse failure.

    ``family`` is the request's expected family (or a request object carrying one).
    An empty flag map contributes no format penalty.
    """
    family = getattr(family, "family", family)
    flags = list(bundle.format_signals.values())
    flag_fail = (sum(1 for f in flags if not f) / len(flags)) if flags else 0.0
    mismatch = 1.0 if bundle.predicted_family != family else 0.0
    parse_fail = 0.0 if bundle.parse_ok else 1.0
    risk = (weights.w_confidence * (1.0 - bundle.confidence)
            + weights.w_format * flag_fail
            + weights.w_family_mismatch * mismatch
            + weights.w_parse_fail * parse_fail)
    return min(1.0, max(0.0, risk))


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: Mapping[TaskKey, float]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for task, tau in self.thresholds.items():
            if not (0.0 <= tau <= 1.0):
                raise SchemaError(f"threshold for {task.value} outside [0, 1]: {tau}")

    def __getitem__(self, task: TaskKey) -> float:
        try:
            return self.thresholds[task]
        except KeyError:
            raise ThresholdMissing(f"no frozen threshold for task {task.value}") from None

    def to_dict(self) -> dict:
        return {
            "thresholds": {t.value: self.thresholds[t] for t in TaskKey if t in self.thresholds},
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ThresholdTable":
        raw = d.get("thresholds")
        if not isinstance(raw, Mapping):
            raise SchemaError("threshold file needs a 'thresholds' object")
        return cls({parse_task_key(k): float(v) for k, v in raw.items()}, dict(d.get("provenance") or {}))

    def save(self, path) -> None:
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        return cls.from_dict(d)


class DevPoint(NamedTuple):
    task: TaskKey
    risk: float
    q: int


def _feasible(points: Sequence[DevPoint], tau: float, floor: Fraction) -> bool:
    accepted = [p.q for p in points if p.risk < tau]
    if not accepted:
        return True
    return Fraction(sum(accepted)) >= floor * len(accepted)


def choose_threshold(points: Sequence[DevPoint], quality_floor: float, grid: Sequence[float]) -> float:
    """Largest grid value whose accepted dev samples meet the quality floor; 0 if none or no data."""
    if not points:
        return 0.0
    floor = Fraction(repr(float(quality_floor)))
    for tau in sorted(grid, reverse=True):
        if _feasible(points, tau, floor):
            return float(tau)
    return 0.0


def freeze_thresholds(dev_records: Iterable[DevPoint], quality_floor: float = DEFAULT_QUALITY_FLOOR,
                      grid: Sequence[float] = DEFAULT_GRID, *, dev_digest: str = "",
                      created_at: str = "") -> ThresholdTable:
    if not grid:
        raise EmptyGrid("threshold grid is empty")
    if any(not (0.0 <= g <= 1.0) for g in grid):
        raise ConfigError("grid values must lie in [0, 1]")
    by_task: dict[TaskKey, list[DevPoint]] = {t: [] for t in TaskKey}
    for p in dev_records:
        by_task[p.task].append(p)
    table = {t: choose_threshold(pts, quality_floor, grid) for t, pts in by_task.items()}
    provenance = {"dev_split_digest": dev_digest, "quality_floor": quality_floor,
                  "grid": list(grid), "created_at": created_at}
    return ThresholdTable(table, provenance)


def decide(risk: float, task: TaskKey, table: ThresholdTable) -> RouteDecision:
    return RouteDecision.from_risk(risk, table[task])


def parse_grid(text: Optional[str]) -> tuple[float, ...]:
    if not text:
        return DEFAULT_GRID
    try:
        return tuple(sorted(float(x) for x in text.split(",") if x.strip()))
    except ValueError:
        raise ConfigError(f"grid must be comma-separated numbers, got {text!r}") from None
