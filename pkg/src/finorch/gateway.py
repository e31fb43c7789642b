"""Multi-source chat gateway.

Registers heterogeneous chat backends behind one interface and executes
requests with retry/backoff. The wire protocol is the OpenAI-compatible
chat-completions shape (POST {base_url}/chat/completions, response read
from choices[0].message.content), which the supported backends all speak.

A deterministic scripted mock transport ships alongside the HTTP one so
every higher layer is testable offline.
"""

from __future__ import annotations

import datetime as dt
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import requests

from finorch.clock import Clock, SystemClock
from finorch.errors import (
    ConfigError,
    DuplicateBackend,
    MalformedResponse,
    RegistrySealed,
    Timeout,
    TransportError,
    TransportExhausted,
    TransportTimeout,
    UnknownBackend,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BACKOFF_INITIAL",
    "MOCK_SENTINEL",
    "BackendSpec",
    "ChatExchange",
    "ChatMessage",
    "Gateway",
    "HttpTransport",
    "MockRule",
    "MockTransport",
    "Transport",
]

ROLES = ("system", "user", "assistant")

#: First backoff window in seconds; each retry doubles it (full jitter).
BACKOFF_INITIAL = 0.5

#: Reply for mock requests no scripted rule matches.
MOCK_SENTINEL = "MOCK-NO-MATCH"


@dataclass(frozen=True)
class BackendSpec:
    """Connection settings for one chat backend."""

    backend_id: str
    base_url: str
    model_name: str
    api_key_env: str = ""  # name of the env var holding the credential
    max_tokens: int = 1024
    temperature: float = 0.0
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if not self.backend_id:
            raise ValueError("backend_id must be non-empty")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout!r}")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError(
                f"temperature must lie in [0, 2], got {self.temperature!r}"
            )
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens!r}")
        if self.max_retries < 0:
            raise ValueError(
                f"max_retries must be non-negative, got {self.max_retries!r}"
            )


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class ChatExchange:
    """Audit record of one completed chat call."""

    backend_id: str
    request_messages: tuple[ChatMessage, ...]
    response_text: str
    latency: float
    attempt_count: int
    finished_at: dt.datetime


class Transport(Protocol):
    """Sends one request payload and returns the decoded response body."""

    def send(self, spec: BackendSpec, payload: dict[str, Any]) -> dict[str, Any]: ...


class HttpTransport:
    """Real HTTP transport; credentials come from the env var that
    ``BackendSpec.api_key_env`` names."""

    def __init__(self, session: requests.Session | None = None):
        self._session = session or requests.Session()

    def send(self, spec: BackendSpec, payload: dict[str, Any]) -> dict[str, Any]:
        headers = {}
        if spec.api_key_env:
            key = os.environ.get(spec.api_key_env)
            if not key:
                raise ConfigError(
                    f"backend {spec.backend_id!r} expects a credential in "
                    f"environment variable {spec.api_key_env!r}, which is unset"
                )
            headers["Authorization"] = f"Bearer {key}"
        url = spec.base_url.rstrip("/") + "/chat/completions"
        try:
            response = self._session.post(
                url, json=payload, headers=headers, timeout=spec.timeout
            )
        except requests.exceptions.Timeout as exc:
            raise TransportTimeout(f"request to {url} timed out") from exc
        except requests.exceptions.RequestException as exc:
            raise TransportError(f"request to {url} failed: {exc}") from exc
        if response.status_code != 200:
            raise TransportError(
                f"{url} answered HTTP {response.status_code}: "
                f"{response.text[:200]}"
            )
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResponse(
                f"{url} answered non-JSON body: {response.text[:200]}"
            ) from exc


@dataclass
class MockRule:
    """One scripted behaviour, selected by substring match.

    ``reply`` rules answer with fixed text. ``fail`` rules raise a transient
    transport error; with ``times`` set they do so only for that many
    matching requests and are skipped afterwards (letting a later rule
    answer), which scripts "fail twice, then succeed" flows.
    """

    match: str
    reply: str | None = None
    fail: bool = False
    times: int | None = None

    def __post_init__(self) -> None:
        if self.fail == (self.reply is not None):
            raise ValueError("rule must set exactly one of reply or fail")
        if self.times is not None and not self.fail:
            raise ValueError("times only applies to fail rules")
        if self.times is not None and self.times < 1:
            raise ValueError("times must be at least 1")


def _as_rule(raw: MockRule | Mapping[str, Any]) -> MockRule:
    if isinstance(raw, MockRule):
        return raw
    return MockRule(
        match=raw.get("match", ""),
        reply=raw.get("reply"),
        fail=bool(raw.get("fail", False)),
        times=raw.get("times"),
    )


class MockTransport:
    """In-process deterministic backend: first-substring-match scripting.

    Responses are a pure function of the script and the request history
    (fail rules with ``times`` consume one budget unit per matching
    request). No network, no randomness.
    """

    def __init__(self, script: Sequence[MockRule | Mapping[str, Any]]):
        if not script:
            raise ValueError("mock script must contain at least one rule")
        self._rules = [_as_rule(r) for r in script]
        self._remaining = [r.times for r in self._rules]
        self._lock = threading.Lock()

    def send(self, spec: BackendSpec, payload: dict[str, Any]) -> dict[str, Any]:
        last_user = ""
        for message in payload.get("messages", []):
            if message.get("role") == "user":
                last_user = message.get("content", "")
        with self._lock:
            for i, rule in enumerate(self._rules):
                if rule.match not in last_user:
                    continue
                if rule.fail:
                    if self._remaining[i] is None:
                        raise TransportError(
                            f"scripted failure for match {rule.match!r}"
                        )
                    if self._remaining[i] > 0:
                        self._remaining[i] -= 1
                        raise TransportError(
                            f"scripted failure for match {rule.match!r}"
                        )
                    continue  # budget spent: fall through to later rules
                return _completion_body(rule.reply or "")
        return _completion_body(MOCK_SENTINEL)


def _completion_body(text: str) -> dict[str, Any]:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def _extract_content(body: dict[str, Any]) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(
            f"response body missing choices[0].message.content: {body!r}"
        ) from None
    if not isinstance(content, str):
        raise MalformedResponse(f"completion content is not text: {content!r}")
    return content


class Gateway:
    """Backend registry plus retrying chat executor.

    ``sleeper`` and ``rng`` are injectable so backoff is testable with a
    fake clock; ``clock`` stamps exchanges (inject a FixedClock for
    byte-stable offline runs).
    """

    def __init__(
        self,
        transport: Transport | None = None,
        clock: Clock | None = None,
        sleeper: Callable[[float], None] | None = None,
        rng: random.Random | None = None,
    ):
        self._default_transport: Transport = transport or HttpTransport()
        self._transports: dict[str, Transport] = {}
        self._backends: dict[str, BackendSpec] = {}
        self._sealed = False
        self._clock: Clock = clock or SystemClock()
        self._sleep = sleeper or time.sleep
        self._rng = rng or random.Random()
        self._lock = threading.Lock()

    # -- registry ----------------------------------------------------------

    def register_backend(
        self, spec: BackendSpec, transport: Transport | None = None
    ) -> str:
        if self._sealed:
            raise RegistrySealed(
                f"cannot register {spec.backend_id!r}: registry is sealed"
            )
        if spec.backend_id in self._backends:
            raise DuplicateBackend(f"backend {spec.backend_id!r} already registered")
        self._backends[spec.backend_id] = spec
        if transport is not None:
            self._transports[spec.backend_id] = transport
        logger.debug("registered backend %s", spec.backend_id)
        return spec.backend_id

    def script_mock(
        self,
        backend_id: str,
        script: Sequence[MockRule | Mapping[str, Any]],
        **overrides: Any,
    ) -> BackendSpec:
        """Register an in-process scripted backend and return its spec."""
        spec = BackendSpec(
            backend_id=backend_id,
            base_url="mock://" + backend_id,
            model_name=overrides.pop("model_name", "mock-model"),
            **overrides,
        )
        self.register_backend(spec, transport=MockTransport(script))
        return spec

    def seal(self) -> None:
        self._sealed = True

    @property
    def sealed(self) -> bool:
        return self._sealed

    def list_backends(self) -> list[str]:
        return list(self._backends)  # dict preserves registration order

    def get_backend(self, backend_id: str) -> BackendSpec:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise UnknownBackend(f"no backend registered as {backend_id!r}") from None

    # -- chat --------------------------------------------------------------

    def chat(
        self,
        backend_id: str,
        messages: Sequence[ChatMessage],
        *,
        temperature: float | None = None,
        max_tokens: int | None = None,
    ) -> ChatExchange:
        spec = self.get_backend(backend_id)
        if not messages:
            raise ValueError("messages must be non-empty")
        payload = {
            "model": spec.model_name,
            "messages": [
                {"role": m.role, "content": m.content} for m in messages
            ],
            "temperature": spec.temperature if temperature is None else temperature,
            "max_tokens": spec.max_tokens if max_tokens is None else max_tokens,
        }
        transport = self._transports.get(backend_id, self._default_transport)
        started = self._clock.now()
        last_error: TransportError | None = None
        for attempt in range(spec.max_retries + 1):
            try:
                body = transport.send(spec, payload)
            except TransportError as exc:
                last_error = exc
                if attempt < spec.max_retries:
                    delay = self._rng.uniform(0.0, BACKOFF_INITIAL * 2**attempt)
                    logger.debug(
                        "backend %s attempt %d failed (%s); retrying in %.3fs",
                        backend_id, attempt + 1, exc, delay,
                    )
                    self._sleep(delay)
                continue
            text = _extract_content(body)
            finished = self._clock.now()
            return ChatExchange(
                backend_id=backend_id,
                request_messages=tuple(messages),
                response_text=text,
                latency=max((finished - started).total_seconds(), 0.0),
                attempt_count=attempt + 1,
                finished_at=finished,
            )
        attempts = spec.max_retries + 1
        if isinstance(last_error, TransportTimeout):
            raise Timeout(
                f"backend {backend_id!r}: all {attempts} attempt(s) timed out"
            ) from last_error
        raise TransportExhausted(
            f"backend {backend_id!r}: all {attempts} attempt(s) failed: "
            f"{last_error}"
        ) from last_error
