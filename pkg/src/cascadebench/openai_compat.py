"""Minimal OpenAI-compatible chat-completions client with backoff on 429/5xx."""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional

import httpx

from .errors import BackendFailure

logger = logging.getLogger(__name__)

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


def join_url(base_url: str, path: str) -> str:
    return base_url.rstrip("/") + "/" + path.lstrip("/")


def auth_headers(api_key: Optional[str]) -> dict[str, str]:
    return {"Authorization": f"Bearer {api_key}"} if api_key else {}


def chat_completion(client: httpx.Client, base_url: str, api_key: Optional[str], model: str,
                    messages: list[dict], *, max_tokens: int = 1024, temperature: float = 0.0,
                    seed: Optional[int] = None, max_retries: int = 3, backoff_s: float = 0.5,
                    sleep: Callable[[float], None] = time.sleep) -> str:
    """POST /chat/completions and return the first choice's message content."""
    body = {"model": model, "messages": messages, "max_tokens": max_tokens, "temperature": temperature}
    if seed is not None:
        body["seed"] = seed
    url = join_url(base_url, "chat/completions")
    delay = backoff_s
    for attempt in range(max_retries + 1):
        try:
            resp = client.post(url, json=body, headers=auth_headers(api_key))
        except httpx.HTTPError as exc:
            raise BackendFailure(f"{url}: {exc.__class__.__name__}: {exc}") from exc
        if resp.status_code in RETRY_STATUSES and attempt < max_retries:
            logger.warning("%s returned %s; retrying in %.2fs", url, resp.status_code, delay)
            sleep(delay)
            delay *= 2
            continue
        if resp.status_code >= 400:
            raise BackendFailure(f"{url}: HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendFailure(f"{url}: unexpected response body ({exc})") from exc
    raise BackendFailure(f"{url}: retries exhausted")
