"""Prompt bank: router template plus one specialist template per task family.

Templates are plain text files with ``{slot}`` placeholders. Only known slot
names are substituted, in a single pass, so braces in prompts or drafts are
left alone.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from ..domain import DraftBundle, TaskFamily
from ..errors import IoFailure, MissingTemplate

NO_DRAFT_MARKER = "[no usable draft]"
SLOTS = ("task", "language", "original_prompt", "draft_or_marker", "contract_description")
_SLOT_RE = re.compile(r"\{(" + "|".join(SLOTS) + r")\}")


def render(template: str, **values: str) -> str:
    return _SLOT_RE.sub(lambda m: values.get(m.group(1), m.group(0)), template)


@dataclass(frozen=True)
class PromptBank:
    router: str
    specialists: Mapping[TaskFamily, str]

    @classmethod
    def from_dir(cls, path) -> "PromptBank":
        root = resources.files("cascadebench") / "data" / "prompts" if path is None else Path(path)
        try:
            router = (root / "router.txt").read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"prompt bank {root}: {exc}") from exc
        specialists = {}
        for fam in TaskFamily:
            f = root / f"{fam.value}.txt"
            if f.is_file():
                specialists[fam] = f.read_text(encoding="utf-8")
        return cls(router, specialists)

    @property
    def digest(self) -> str:
        h = hashlib.sha256(self.router.encode("utf-8"))
        for fam in sorted(self.specialists, key=lambda f: f.value):
            h.update(fam.value.encode() + b"\0" + self.specialists[fam].encode("utf-8"))
        return h.hexdigest()


def default_bank() -> PromptBank:
    return PromptBank.from_dir(None)


def build_router_prompt(request, bank: PromptBank) -> str:
    return render(bank.router, task=request.task.value, language=request.language.value,
                  contract_description=request.contract.describe(), original_prompt=request.prompt)


def build_specialist_prompt(request, draft: Optional[DraftBundle], bank: PromptBank,
                            family: Optional[TaskFamily] = None) -> str:
    """Family template with the original prompt and the draft (or the no-draft marker)."""
    family = family or request.family
    template = bank.specialists.get(family)
    if template is None:
        raise MissingTemplate(f"prompt bank has no template for family {family.value}")
    body = draft.draft_answer if (draft is not None and draft.parse_ok and draft.draft_answer) else NO_DRAFT_MARKER
    return render(template, original_prompt=request.prompt, draft_or_marker=body,
                  contract_description=request.contract.describe(),
                  task=request.task.value, language=request.language.value)
