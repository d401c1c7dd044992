from .backends import Generation, GenerationParams, MockBackend, ModelBackend, OpenAIChatBackend
from .cascade import (FrozenClock, NormalizedRequest, SystemConfig, WallClock, draft,
                      normalize_request, parse_router_output, rule_v2_family, run_sample)
from .prompts import NO_DRAFT_MARKER, PromptBank, build_router_prompt, build_specialist_prompt, default_bank
from .runner import RunManifest, run_split

__all__ = [
    "Generation", "GenerationParams", "MockBackend", "ModelBackend", "OpenAIChatBackend",
    "FrozenClock", "NormalizedRequest", "SystemConfig", "WallClock", "draft", "normalize_request",
    "parse_router_output", "rule_v2_family", "run_sample", "NO_DRAFT_MARKER", "PromptBank",
    "build_router_prompt", "build_specialist_prompt", "default_bank", "RunManifest", "run_split",
]
