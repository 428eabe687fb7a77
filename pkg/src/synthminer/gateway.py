"""Provider-agnostic access to text and vision models.

Every pipeline stage talks to models through this module, which owns the
cross-cutting concerns: retries with jittered exponential backoff, token
bucket rate limiting per provider, and additive cost accounting. Adapters
exist for an OpenAI-style HTTP chat API (text and vision) and for a
deterministic mock used in tests and offline runs.

Mock fixture layout: a directory of ``*.json`` files, read in filename
order. Each file holds ``{"rules": [...], "default_response": ...}`` or a
bare rule list. A rule is matched against a request in file order by exact
``fingerprint`` (see request_fingerprint) or by substring lists
``system_contains`` / ``user_contains`` (optionally gated on ``kind``);
``fail_times``/``fail_kind`` make the rule fail transiently before it
answers, which is how retry behavior is exercised without a network.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import math
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

BACKOFF_BASE_SECONDS = 1.0
BACKOFF_CAP_SECONDS = 30.0


class AuthError(Exception):
    """Credentials rejected or absent; never retried."""


class TransportError(Exception):
    """Transient failure (timeout, connection loss, 429, 5xx); retryable."""


class RateLimitExhausted(Exception):
    """All attempts spent without a successful response."""


class ImageEncodingError(Exception):
    """Image payload is empty or not decodable."""


@dataclass(frozen=True)
class ModelRequest:
    kind: str  # "text" | "vision"
    user_prompt: str
    system_prompt: str | None = None
    image: bytes | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.kind not in ("text", "vision"):
            raise ValueError(f"kind must be 'text' or 'vision', got {self.kind!r}")
        if (self.image is not None) != (self.kind == "vision"):
            raise ValueError("image payload is required for vision requests and forbidden otherwise")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    cost_estimate: float
    attempts: int
    provider: str
    model: str


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    endpoint: str = ""
    model: str = ""
    credentials_env: str = ""
    rate_limit: float = 0.0  # requests per second; <= 0 means unlimited
    price_per_input_token: float = 0.0
    price_per_output_token: float = 0.0


def request_fingerprint(request: ModelRequest) -> str:
    """Stable hash of everything that influences a model's answer."""
    h = hashlib.sha256()
    h.update(request.kind.encode())
    h.update(b"\x00")
    h.update((request.system_prompt or "").encode())
    h.update(b"\x00")
    h.update(request.user_prompt.encode())
    h.update(b"\x00")
    if request.image is not None:
        h.update(hashlib.sha256(request.image).digest())
    h.update(b"\x00")
    h.update(repr((request.temperature, request.max_tokens)).encode())
    return h.hexdigest()


def _approx_tokens(text: str) -> int:
    return max(1, math.ceil(len(text) / 4))


class Provider(Protocol):
    def send(self, request: ModelRequest) -> tuple[str, int, int]:
        """Return (text, prompt_tokens, completion_tokens) or raise."""
        ...


# ---------------------------------------------------------------------------
# Mock provider


@dataclass
class MockRule:
    response: str
    kind: str | None = None
    fingerprint: str | None = None
    system_contains: tuple[str, ...] = ()
    user_contains: tuple[str, ...] = ()
    fail_times: int = 0
    fail_kind: str = "transport"  # "transport" | "auth"

    def matches(self, request: ModelRequest, fingerprint: str) -> bool:
        if self.fingerprint is not None:
            return self.fingerprint == fingerprint
        if self.kind is not None and self.kind != request.kind:
            return False
        system = request.system_prompt or ""
        if any(s not in system for s in self.system_contains):
            return False
        if any(s not in request.user_prompt for s in self.user_contains):
            return False
        return bool(self.system_contains or self.user_contains or self.kind)


class MockProvider:
    """Table-driven fake model: same requests in, same answers out."""

    def __init__(self, rules: list[MockRule], default_response: str | None = None):
        self.rules = list(rules)
        self.default_response = default_response
        self._remaining_failures = {i: r.fail_times for i, r in enumerate(self.rules)}
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_dir(cls, fixture_dir: str | Path) -> "MockProvider":
        rules: list[MockRule] = []
        default: str | None = None
        for path in sorted(Path(fixture_dir).glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            raw_rules = data if isinstance(data, list) else data.get("rules", [])
            if isinstance(data, dict) and data.get("default_response") is not None:
                default = data["default_response"]
            for raw in raw_rules:
                rules.append(
                    MockRule(
                        response=raw["response"],
                        kind=raw.get("kind"),
                        fingerprint=raw.get("fingerprint"),
                        system_contains=tuple(raw.get("system_contains", ())),
                        user_contains=tuple(raw.get("user_contains", ())),
                        fail_times=int(raw.get("fail_times", 0)),
                        fail_kind=raw.get("fail_kind", "transport"),
                    )
                )
        return cls(rules, default_response=default)

    def send(self, request: ModelRequest) -> tuple[str, int, int]:
        fingerprint = request_fingerprint(request)
        with self._lock:
            self.calls += 1
            for i, rule in enumerate(self.rules):
                if not rule.matches(request, fingerprint):
                    continue
                if self._remaining_failures.get(i, 0) > 0:
                    self._remaining_failures[i] -= 1
                    if rule.fail_kind == "auth":
                        raise AuthError("mock credential rejection")
                    raise TransportError("mock transient failure")
                return self._respond(request, rule.response)
            if self.default_response is not None:
                return self._respond(request, self.default_response)
        raise TransportError(f"mock provider has no rule for request {fingerprint[:12]}")

    def _respond(self, request: ModelRequest, text: str) -> tuple[str, int, int]:
        prompt_tokens = _approx_tokens((request.system_prompt or "") + request.user_prompt)
        if request.image is not None:
            prompt_tokens += _approx_tokens(" " * len(request.image))
        return text, prompt_tokens, _approx_tokens(text)


# ---------------------------------------------------------------------------
# HTTP provider (OpenAI-style chat completions; vision via data URLs)


class HttpChatProvider:
    def __init__(self, config: ProviderConfig, timeout: float = 120.0):
        self.config = config
        self.timeout = timeout

    def _api_key(self) -> str:
        import os

        key = os.environ.get(self.config.credentials_env or "", "")
        if not key:
            raise AuthError(f"no credentials in ${self.config.credentials_env}")
        return key

    def send(self, request: ModelRequest) -> tuple[str, int, int]:
        import requests

        if request.kind == "vision":
            media = sniff_media_type(request.image or b"")
            encoded = base64.b64encode(request.image or b"").decode("ascii")
            content: object = [
                {"type": "text", "text": request.user_prompt},
                {"type": "image_url", "image_url": {"url": f"data:{media};base64,{encoded}"}},
            ]
        else:
            content = request.user_prompt
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": content})
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = requests.post(
                self.config.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self._api_key()}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"provider returned {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"provider returned {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise TransportError(f"malformed provider response: {exc}") from exc
        usage = payload.get("usage") or {}
        return (
            text,
            int(usage.get("prompt_tokens", _approx_tokens(request.user_prompt))),
            int(usage.get("completion_tokens", _approx_tokens(text))),
        )


def sniff_media_type(image: bytes) -> str:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(image)) as im:
            fmt = (im.format or "").lower()
    except Exception:
        return "application/octet-stream"
    return {"jpeg": "image/jpeg", "png": "image/png", "gif": "image/gif", "webp": "image/webp"}.get(
        fmt, f"image/{fmt}" if fmt else "application/octet-stream"
    )


def verify_image(image: bytes | None) -> None:
    """Raise ImageEncodingError unless the payload decodes as an image."""
    if not image:
        raise ImageEncodingError("empty image payload")
    from PIL import Image

    try:
        with Image.open(io.BytesIO(image)) as im:
            im.verify()
    except Exception as exc:
        raise ImageEncodingError(f"image payload is not decodable: {exc}") from exc


# ---------------------------------------------------------------------------
# Rate limiting


class TokenBucket:
    """Classic token bucket: refill at `rate` per second up to `capacity`."""

    def __init__(
        self,
        rate: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, self.rate))
        self.tokens = self.capacity
        self.clock = clock
        self.sleeper = sleeper
        self.updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleeper(wait)


# ---------------------------------------------------------------------------
# Gateway


@dataclass
class _CostLedger:
    total: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)


class LlmGateway:
    """One provider + the retry/rate-limit/cost policy wrapped around it."""

    def __init__(
        self,
        provider: Provider,
        config: ProviderConfig,
        *,
        max_in_flight: int = 8,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.provider = provider
        self.config = config
        self.sleeper = sleeper
        self.rng = rng or random.Random()
        self._bucket = TokenBucket(config.rate_limit, sleeper=sleeper) if config.rate_limit > 0 else None
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._costs = _CostLedger()

    @property
    def total_cost(self) -> float:
        with self._costs.lock:
            return self._costs.total

    def reset_cost(self) -> float:
        with self._costs.lock:
            previous = self._costs.total
            self._costs.total = 0.0
            return previous

    def complete_text(self, request: ModelRequest) -> ModelResponse:
        if request.kind != "text":
            raise ValueError("complete_text requires a text request")
        return self._complete(request)

    def complete_vision(self, request: ModelRequest) -> ModelResponse:
        if request.kind != "vision":
            raise ValueError("complete_vision requires a vision request")
        verify_image(request.image)
        return self._complete(request)

    def _complete(self, request: ModelRequest) -> ModelResponse:
        attempts_allowed = request.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(1, attempts_allowed + 1):
            with self._slots:
                if self._bucket is not None:
                    self._bucket.acquire()
                try:
                    text, prompt_tokens, completion_tokens = self.provider.send(request)
                except AuthError:
                    raise
                except TransportError as exc:
                    last_error = exc
                else:
                    cost = (
                        prompt_tokens * self.config.price_per_input_token
                        + completion_tokens * self.config.price_per_output_token
                    )
                    with self._costs.lock:
                        self._costs.total += cost
                    return ModelResponse(
                        text=text,
                        prompt_tokens=prompt_tokens,
                        completion_tokens=completion_tokens,
                        cost_estimate=cost,
                        attempts=attempt,
                        provider=self.config.name,
                        model=self.config.model,
                    )
            if attempt < attempts_allowed:
                ceiling = min(BACKOFF_CAP_SECONDS, BACKOFF_BASE_SECONDS * (2 ** (attempt - 1)))
                self.sleeper(self.rng.uniform(0.0, ceiling))
        raise RateLimitExhausted(f"gave up after {attempts_allowed} attempts: {last_error}")
