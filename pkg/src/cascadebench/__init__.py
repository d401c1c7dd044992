"""Offline harness for a sample-level 1B->7B routing cascade on educational tasks."""

from __future__ import annotations

__version__ = "0.1.0"

from .domain import (ContractKind, DraftBundle, Language, OutputContract, PredictionRecord, Route,
                     RouteDecision, Sample, SummaryReport, TaskFamily, TaskKey, TraceRecord)
from .errors import CascadeError, EnvironmentFailure

__all__ = [
    "__version__", "ContractKind", "DraftBundle", "Language", "OutputContract", "PredictionRecord", "Route",
    "RouteDecision", "Sample", "SummaryReport", "TaskFamily", "TaskKey", "TraceRecord", "CascadeError",
    "EnvironmentFailure",
]
