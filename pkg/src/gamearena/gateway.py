"""Provider-agnostic chat-completion client.

Three wire styles are supported:

``openai_style``
    POST ``{model, messages: [{role: user, content}], temperature, top_p?, top_k?, max_tokens?}``,
    reply text at ``choices[0].message.content``.
``anthropic_style``
    POST ``{model, max_tokens, messages: [...], temperature, top_p?, top_k?}``,
    reply text is the concatenation of ``content[*].text``.
``generic_http``
    POST ``{model, prompt, params: {temperature, top_p?, top_k?, max_tokens?}}``,
    reply text at ``text`` (or ``output``, a string or list of string chunks).

With a mock endpoint every profile is routed to ``<mock>/chat/completions``,
``<mock>/messages`` or ``<mock>/generate`` according to its style.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping
from urllib.parse import urlsplit

import httpx

log = logging.getLogger(__name__)

PROVIDER_KINDS = ("openai_style", "anthropic_style", "generic_http")
MOCK_PATHS = {
    "openai_style": "/chat/completions",
    "anthropic_style": "/messages",
    "generic_http": "/generate",
}
ANTHROPIC_VERSION = "2023-06-01"
ANTHROPIC_DEFAULT_MAX_TOKENS = 1024


class GatewayError(RuntimeError):
    pass


class AuthError(GatewayError):
    pass


class ExhaustedRetriesError(GatewayError):
    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(message)


class MalformedResponseError(GatewayError):
    pass


class ProviderError(GatewayError):
    """Non-retryable error status other than an authentication failure."""

    def __init__(self, status: int, message: str):
        self.status = status
        super().__init__(message)


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Sampling:
    # numbers keep the type they were parsed with so 1 and 1.0 serialize as given
    temperature: float
    top_p: float | None = None
    top_k: int | None = None

    def as_params(self) -> dict[str, Any]:
        params: dict[str, Any] = {"temperature": self.temperature}
        if self.top_p is not None:
            params["top_p"] = self.top_p
        if self.top_k is not None:
            params["top_k"] = self.top_k
        return params


@dataclass(frozen=True)
class ModelProfile:
    profile_id: str
    provider_kind: str
    model: str
    endpoint: str
    sampling: Sampling
    credentials_env: str | None = None

    def __post_init__(self) -> None:
        if self.provider_kind not in PROVIDER_KINDS:
            raise ProfileError(f"{self.profile_id}: provider must be one of {PROVIDER_KINDS}")
        t = self.sampling.temperature
        if isinstance(t, bool) or not isinstance(t, (int, float)) or t < 0:
            raise ProfileError(f"{self.profile_id}: temperature must be a number >= 0")
        p = self.sampling.top_p
        if p is not None and (isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 < p <= 1):
            raise ProfileError(f"{self.profile_id}: top_p must be in (0, 1]")
        k = self.sampling.top_k
        if k is not None and (isinstance(k, bool) or not isinstance(k, int) or k < 1):
            raise ProfileError(f"{self.profile_id}: top_k must be a positive integer")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_output_tokens: int | None = None
    profile_id: str = ""


@dataclass(frozen=True)
class CompletionResult:
    text: str
    attempts: int
    latency: float
    usage: dict[str, Any] | None = None


def profile_from_dict(doc: Mapping[str, Any]) -> ModelProfile:
    try:
        sampling = doc.get("sampling", {})
        return ModelProfile(
            profile_id=doc["id"],
            provider_kind=doc["provider"],
            model=doc["model"],
            endpoint=doc.get("endpoint", ""),
            sampling=Sampling(
                temperature=sampling["temperature"],
                top_p=sampling.get("top_p"),
                top_k=sampling.get("top_k"),
            ),
            credentials_env=doc.get("credentialsEnv"),
        )
    except KeyError as exc:
        raise ProfileError(f"profile {doc.get('id', '?')!r} is missing field {exc.args[0]!r}") from None
    except AttributeError:
        raise ProfileError("profiles must be JSON objects") from None


def load_profiles(text: str) -> dict[str, ModelProfile]:
    """Parse a profiles file: a JSON list of profile objects."""
    try:
        docs = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"profiles file: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    if not isinstance(docs, list):
        raise ProfileError("profiles file must hold a JSON list")
    profiles: dict[str, ModelProfile] = {}
    for doc in docs:
        profile = profile_from_dict(doc)
        if profile.profile_id in profiles:
            raise ProfileError(f"duplicate profile id {profile.profile_id!r}")
        profiles[profile.profile_id] = profile
    return profiles


def build_request(profile: ModelProfile, prompt: str, max_output_tokens: int | None = None) -> dict[str, Any]:
    messages = [{"role": "user", "content": prompt}]
    params = profile.sampling.as_params()
    if profile.provider_kind == "openai_style":
        body: dict[str, Any] = {"model": profile.model, "messages": messages, **params}
        if max_output_tokens is not None:
            body["max_tokens"] = max_output_tokens
        return body
    if profile.provider_kind == "anthropic_style":
        return {
            "model": profile.model,
            "max_tokens": max_output_tokens or ANTHROPIC_DEFAULT_MAX_TOKENS,
            "messages": messages,
            **params,
        }
    if max_output_tokens is not None:
        params["max_tokens"] = max_output_tokens
    return {"model": profile.model, "prompt": prompt, "params": params}


def extract_text(provider_kind: str, payload: Any) -> str:
    try:
        if provider_kind == "openai_style":
            text = payload["choices"][0]["message"]["content"]
        elif provider_kind == "anthropic_style":
            text = "".join(block["text"] for block in payload["content"] if block.get("type", "text") == "text")
        else:
            text = payload["text"] if "text" in payload else payload["output"]
            if isinstance(text, list):
                text = "".join(text)
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"unexpected {provider_kind} response shape: {exc!r}") from None
    if not isinstance(text, str) or not text.strip():
        raise MalformedResponseError("provider returned no text")
    return text


@dataclass
class RetryPolicy:
    max_retries: int = 5
    base_delay: float = 1.0
    max_delay: float = 30.0

    def delay(self, retry: int) -> float:
        """Backoff before ``retry`` (0-based), without jitter."""
        return min(self.max_delay, self.base_delay * (2 ** retry))


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


class Gateway:
    """Shared, thread-safe completion client with a per-provider concurrency cap."""

    def __init__(
        self,
        profiles: Mapping[str, ModelProfile] | None = None,
        *,
        mock_endpoint: str | None = None,
        retry: RetryPolicy | None = None,
        per_provider_limit: int = 4,
        timeout: float = 120.0,
        env: Mapping[str, str] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        client: httpx.Client | None = None,
    ):
        self.profiles = dict(profiles or {})
        self.mock_endpoint = mock_endpoint.rstrip("/") if mock_endpoint else None
        self.retry = retry or RetryPolicy()
        self.per_provider_limit = per_provider_limit
        self.env = os.environ if env is None else env
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._client = client or httpx.Client(timeout=timeout)
        self._limits: dict[tuple[str, str], threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "Gateway":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def profile(self, profile_id: str) -> ModelProfile:
        try:
            return self.profiles[profile_id]
        except KeyError:
            raise ProfileError(f"unknown model profile {profile_id!r}") from None

    def url_for(self, profile: ModelProfile) -> str:
        if self.mock_endpoint:
            return self.mock_endpoint + MOCK_PATHS[profile.provider_kind]
        if not profile.endpoint:
            raise ProfileError(f"profile {profile.profile_id!r} has no endpoint")
        return profile.endpoint

    def _headers(self, profile: ModelProfile) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        secret = None
        if profile.credentials_env:
            secret = self.env.get(profile.credentials_env)
            if not secret and not self.mock_endpoint:
                raise AuthError(f"credential variable {profile.credentials_env} is not set "
                                f"for profile {profile.profile_id!r}")
        if secret:
            if profile.provider_kind == "anthropic_style":
                headers["x-api-key"] = secret
                headers["anthropic-version"] = ANTHROPIC_VERSION
            else:
                headers["authorization"] = f"Bearer {secret}"
        return headers

    def _limiter(self, profile: ModelProfile, url: str) -> threading.BoundedSemaphore:
        key = (profile.provider_kind, urlsplit(url).netloc)
        with self._lock:
            if key not in self._limits:
                self._limits[key] = threading.BoundedSemaphore(self.per_provider_limit)
            return self._limits[key]

    def complete(self, profile: ModelProfile | str, request: CompletionRequest) -> CompletionResult:
        if isinstance(profile, str):
            profile = self.profile(profile)
        headers = self._headers(profile)
        url = self.url_for(profile)
        body = build_request(profile, request.prompt, request.max_output_tokens)
        limiter = self._limiter(profile, url)
        started = time.perf_counter()
        attempts = 0
        last = ""
        while True:
            attempts += 1
            with limiter:
                try:
                    response = self._client.post(url, json=body, headers=headers)
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    response = None
                    last = f"{type(exc).__name__}: {exc}"
            if response is not None:
                status = response.status_code
                if status in (401, 403):
                    raise AuthError(f"{profile.profile_id}: provider rejected credentials (HTTP {status})")
                if 200 <= status < 300:
                    try:
                        payload = response.json()
                    except ValueError:
                        raise MalformedResponseError(f"{profile.profile_id}: response is not JSON") from None
                    text = extract_text(profile.provider_kind, payload)
                    usage = payload.get("usage") if isinstance(payload, dict) else None
                    return CompletionResult(text, attempts, time.perf_counter() - started, usage)
                if not _retryable(status):
                    raise ProviderError(status, f"{profile.profile_id}: HTTP {status}: {response.text[:200]}")
                last = f"HTTP {status}"
            retry = attempts - 1
            if retry >= self.retry.max_retries:
                raise ExhaustedRetriesError(
                    f"{profile.profile_id}: giving up after {attempts} attempts ({last})", attempts)
            delay = self.retry.delay(retry) + self._rng.uniform(0, self.retry.base_delay)
            log.warning("%s: %s, retrying in %.2fs (attempt %d)", profile.profile_id, last, delay, attempts)
            self._sleep(delay)
