"""Transport to chat-completions-style endpoints; all network activity lives here.

Analyzer, perturbation, and judge backends call through :class:`ChatGateway`.
It retries transient failures with exponential backoff, treats every 4xx as
a configuration problem (no retry), accounts token usage, and supports a
replay cache keyed by the (profile, messages) hash so recorded sessions can
be re-run deterministically with no network at all.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

logger = logging.getLogger("faultline.gateway")

Messages = Sequence[dict[str, str]]
#: transport(url, payload, headers, timeout) -> (status_code, body_text)
Transport = Callable[[str, dict[str, Any], dict[str, str], float], tuple[int, str]]


class GatewayError(Exception):
    """Base class for gateway failures."""


class TransportError(GatewayError):
    """Transient transport failure that survived every retry."""


class ConfigurationError(GatewayError):
    """Non-retryable problem: bad credential, bad request, bad profile."""


@dataclass(frozen=True)
class EndpointProfile:
    """Connection settings for one chat-completions endpoint.

    ``credential_env`` names the environment variable holding the API key;
    the key value itself is never stored, logged, or serialized.
    """

    base_url: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 1024
    retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0
    credential_env: str = "FAULTLINE_API_KEY"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")

    def cache_identity(self) -> dict[str, Any]:
        # Everything that shapes a completion, minus secrets and transport knobs.
        return {
            "base_url": self.base_url,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


@dataclass
class UsageTotals:
    calls: int = 0
    cache_hits: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


def _requests_transport(url: str, payload: dict[str, Any], headers: dict[str, str],
                        timeout: float) -> tuple[int, str]:
    import requests

    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.Timeout as exc:
        raise TimeoutError(str(exc)) from exc
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    return resp.status_code, resp.text


def request_hash(profile: EndpointProfile, messages: Messages) -> str:
    """Stable digest of (profile identity, messages) for the replay cache."""
    canon = json.dumps(
        {"profile": profile.cache_identity(), "messages": list(messages)},
        sort_keys=True, ensure_ascii=False,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class ChatGateway:
    """One client per endpoint profile, with usage accounting.

    cache_mode:
        "off"       always hit the endpoint.
        "readwrite" serve from cache when possible, record misses.
        "readonly"  serve from cache only; a miss is an error (CI mode).
    """

    def __init__(self, profile: EndpointProfile, transport: Transport | None = None,
                 cache_dir: str | Path | None = None, cache_mode: str = "off",
                 sleeper: Callable[[float], None] = time.sleep) -> None:
        if cache_mode not in ("off", "readwrite", "readonly"):
            raise ValueError(f"unknown cache_mode {cache_mode!r}")
        if cache_mode != "off" and cache_dir is None:
            raise ValueError("cache_mode requires a cache_dir")
        self.profile = profile
        self.usage = UsageTotals()
        self._transport = transport or _requests_transport
        self._cache_dir = Path(cache_dir) if cache_dir else None
        self._cache_mode = cache_mode
        self._sleep = sleeper

    # -- cache -----------------------------------------------------------------

    def _cache_path(self, key: str) -> Path:
        assert self._cache_dir is not None
        return self._cache_dir / f"{key}.json"

    def _cache_get(self, key: str) -> dict[str, Any] | None:
        path = self._cache_path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _cache_put(self, key: str, entry: dict[str, Any]) -> None:
        self._cache_dir.mkdir(parents=True, exist_ok=True)
        self._cache_path(key).write_text(
            json.dumps(entry, ensure_ascii=False), encoding="utf-8"
        )

    # -- completion --------------------------------------------------------------

    def complete(self, messages: Messages) -> str:
        """Return the assistant text for a messages array.

        Token usage is accumulated on ``self.usage`` as a side channel for
        budget accounting.
        """
        key = request_hash(self.profile, messages)
        if self._cache_mode != "off":
            entry = self._cache_get(key)
            if entry is not None:
                self.usage.cache_hits += 1
                return entry["text"]
            if self._cache_mode == "readonly":
                raise ConfigurationError(f"cache miss in readonly mode for request {key[:12]}")

        text, usage = self._complete_remote(messages)
        if self._cache_mode == "readwrite":
            self._cache_put(key, {"text": text, "usage": usage})
        return text

    def _complete_remote(self, messages: Messages) -> tuple[str, dict[str, int]]:
        profile = self.profile
        url = profile.base_url.rstrip("/") + "/chat/completions"
        payload: dict[str, Any] = {
            "model": profile.model,
            "messages": list(messages),
            "temperature": profile.temperature,
            "max_tokens": profile.max_tokens,
        }
        if profile.seed is not None:
            payload["seed"] = profile.seed
        headers = {"Content-Type": "application/json"}
        credential = os.environ.get(profile.credential_env, "")
        if credential:
            headers["Authorization"] = f"Bearer {credential}"

        logger.debug("POST %s model=%s messages=%d", url, profile.model, len(messages))

        last_error: Exception | None = None
        for attempt in range(profile.retries + 1):
            if attempt:
                self._sleep(profile.backoff_base * (2 ** (attempt - 1)))
            try:
                status, body = self._transport(url, payload, headers, profile.timeout)
            except (TimeoutError, ConnectionError) as exc:
                last_error = exc
                logger.debug("attempt %d transport failure: %s", attempt, exc)
                continue
            if 400 <= status < 500:
                raise ConfigurationError(f"endpoint returned HTTP {status}: {body[:500]}")
            if status != 200:
                last_error = TransportError(f"endpoint returned HTTP {status}")
                logger.debug("attempt %d HTTP %d", attempt, status)
                continue
            text, usage = self._parse_body(body)
            self.usage.calls += 1
            self.usage.prompt_tokens += usage.get("prompt_tokens", 0)
            self.usage.completion_tokens += usage.get("completion_tokens", 0)
            logger.debug("completion ok, %d chars", len(text))
            return text, usage
        raise TransportError(
            f"request failed after {profile.retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _parse_body(body: str) -> tuple[str, dict[str, int]]:
        try:
            data = json.loads(body)
            text = data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise ConfigurationError(f"malformed completion response: {exc}") from exc
        if not isinstance(text, str):
            raise ConfigurationError("completion content is not text")
        usage = data.get("usage") or {}
        return text, {k: v for k, v in usage.items() if isinstance(v, int)}


def complete(profile: EndpointProfile, messages: Messages, **kwargs: Any) -> str:
    """One-shot completion without keeping a gateway around."""
    return ChatGateway(profile, **kwargs).complete(messages)


def agent_policy(gw: ChatGateway, role_prompt: str):
    """An LLM-backed agent policy for the harness.

    Replay determinism is best-effort only: keep the profile at temperature 0
    with a fixed seed. Transport failures surface as retryable errors from
    the run that invoked the policy.
    """

    def policy(query: str, history, feedback: str | None) -> str:
        lines = [f"Task: {query}"]
        for step in history:
            lines.append(f"Step {step.index} - {step.agent.name}: {step.action}")
        if feedback:
            lines.append(f"Latest feedback: {feedback}")
        lines.append("Your action:")
        return gw.complete([
            {"role": "system", "content": role_prompt},
            {"role": "user", "content": "\n".join(lines)},
        ]).strip()

    return policy
