"""Text-completion backends and JSON recovery from free-form completions.

Two backends share one ``complete(request)`` interface:

* ``HttpBackend`` talks to any OpenAI-compatible ``/chat/completions`` endpoint.
* ``MockBackend`` answers from a script, echoes the prompt, or applies regex
  rules, so the full pipeline runs offline and deterministically.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, TypeVar

import httpx

from .errors import (
    BackendConfigError,
    CkmaError,
    ExtractionError,
    RequestError,
    ScriptExhaustedError,
    TransportError,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "CKMA_API_KEY"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-3.5-turbo"
REPROMPT_INSTRUCTION = "Return only valid JSON matching the schema."

T = TypeVar("T")


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    temperature: float = 0.0
    max_output_tokens: int = 2048
    model_id: str = ""  # empty: the backend's configured model

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    token_usage: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    initial_delay: float = 1.0
    multiplier: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, failed_attempts: int) -> float:
        return self.initial_delay * self.multiplier ** (failed_attempts - 1)


class Backend(Protocol):
    max_concurrency: int

    def complete(self, request: CompletionRequest) -> CompletionResponse: ...

    def describe(self) -> dict: ...


_RETRYABLE = {429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-compatible chat completions client with bounded retries."""

    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        model_id: str = DEFAULT_MODEL,
        timeout_seconds: float = 60.0,
        retry: RetryPolicy | None = None,
        max_concurrency: int = 4,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        api_key = os.environ.get(API_KEY_ENV, "").strip()
        if not api_key:
            raise BackendConfigError(f"environment variable {API_KEY_ENV} is not set")
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.timeout_seconds = timeout_seconds
        self.retry = retry or RetryPolicy()
        self.max_concurrency = max_concurrency
        self.attempts = 0
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._lock = threading.Lock()
        self._client = httpx.Client(
            timeout=timeout_seconds,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}"},
        )

    def describe(self) -> dict:
        return {
            "kind": "http",
            "base_url": self.base_url,
            "model_id": self.model_id,
            "timeout_seconds": self.timeout_seconds,
            "max_attempts": self.retry.max_attempts,
        }

    def close(self) -> None:
        self._client.close()

    def _payload(self, request: CompletionRequest) -> dict:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        return {
            "model": request.model_id or self.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        url = f"{self.base_url}/chat/completions"
        payload = self._payload(request)
        last_error = "no attempt made"
        for attempt in range(1, self.retry.max_attempts + 1):
            with self._lock:
                self.attempts += 1
            try:
                with self._slots:
                    resp = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    return _parse_chat_response(resp)
                if resp.status_code not in _RETRYABLE:
                    raise RequestError(resp.status_code, resp.text[:500])
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
            log.warning("completion attempt %d/%d failed: %s",
                        attempt, self.retry.max_attempts, last_error)
            if attempt < self.retry.max_attempts:
                self._sleep(self.retry.delay(attempt))
        raise TransportError(
            f"gave up after {self.retry.max_attempts} attempts: {last_error}",
            attempts=self.retry.max_attempts,
        )


def _parse_chat_response(resp: httpx.Response) -> CompletionResponse:
    try:
        body = resp.json()
        text = body["choices"][0]["message"]["content"] or ""
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise RequestError(resp.status_code, f"unexpected response body: {resp.text[:300]}") from exc
    usage = body.get("usage") or {}
    token_usage = None
    if "prompt_tokens" in usage and "completion_tokens" in usage:
        token_usage = (int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
    return CompletionResponse(text, token_usage)


@dataclass(frozen=True)
class MockRule:
    pattern: re.Pattern
    template: str


@dataclass
class MockBackend:
    """Deterministic offline backend.

    Modes: ``scripted`` returns ``responses`` in order (optionally cycling),
    ``echo`` returns the user text, ``rules`` returns the template of the first
    regex that matches the user text (group references like ``\\1`` expand).
    """

    mode: str
    responses: list[str] = field(default_factory=list)
    rules: list[MockRule] = field(default_factory=list)
    default: Optional[str] = None
    cycle: bool = False
    source: Optional[str] = None
    max_concurrency: int = 1

    def __post_init__(self):
        if self.mode not in ("scripted", "echo", "rules"):
            raise BackendConfigError(f"unknown mock mode {self.mode!r}")
        self._position = 0
        self._lock = threading.Lock()

    @classmethod
    def scripted(cls, responses: Sequence[str], cycle: bool = False) -> "MockBackend":
        return cls("scripted", responses=list(responses), cycle=cycle)

    @classmethod
    def echo(cls) -> "MockBackend":
        return cls("echo")

    @classmethod
    def from_rules(cls, rules: Sequence[tuple[str, str]], default: str | None = None) -> "MockBackend":
        compiled = [MockRule(re.compile(p, re.DOTALL), t) for p, t in rules]
        return cls("rules", rules=compiled, default=default)

    def describe(self) -> dict:
        return {"kind": "mock", "mode": self.mode, "script": self.source}

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if self.mode == "echo":
            return CompletionResponse(request.user_text)
        if self.mode == "rules":
            for rule in self.rules:
                match = rule.pattern.search(request.user_text)
                if match:
                    return CompletionResponse(match.expand(rule.template))
            if self.default is None:
                raise ScriptExhaustedError("no mock rule matched the prompt")
            return CompletionResponse(self.default)
        with self._lock:
            if self._position >= len(self.responses):
                if not self.cycle or not self.responses:
                    raise ScriptExhaustedError(
                        f"mock script exhausted after {len(self.responses)} responses")
                self._position = 0
            text = self.responses[self._position]
            self._position += 1
        return CompletionResponse(text)


def load_mock_script(path: str | Path) -> MockBackend:
    """Build a ``MockBackend`` from a JSON script file.

    Accepted shapes: a JSON array of response strings (scripted), or an object
    ``{"mode": "scripted", "responses": [...], "cycle": bool}``,
    ``{"mode": "echo"}`` or
    ``{"mode": "rules", "rules": [{"pattern": ..., "response": ...}], "default": ...}``.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BackendConfigError(f"mock script {path} is not valid JSON: {exc}") from exc
    if isinstance(spec, list):
        spec = {"mode": "scripted", "responses": spec}
    if not isinstance(spec, dict):
        raise BackendConfigError(f"mock script {path} must be an array or an object")
    mode = spec.get("mode", "scripted")
    if mode == "echo":
        backend = MockBackend.echo()
    elif mode == "rules":
        rules = [(r["pattern"], r["response"]) for r in spec.get("rules", [])]
        backend = MockBackend.from_rules(rules, default=spec.get("default"))
    elif mode == "scripted":
        responses = spec.get("responses", [])
        if not all(isinstance(r, str) for r in responses):
            raise BackendConfigError("scripted responses must all be strings")
        backend = MockBackend.scripted(responses, cycle=bool(spec.get("cycle", False)))
    else:
        raise BackendConfigError(f"unknown mock mode {mode!r}")
    backend.source = str(path)
    return backend


class RecordingBackend:
    """Pass-through wrapper that keeps every request and response it sees."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.max_concurrency = inner.max_concurrency
        self.requests: list[CompletionRequest] = []
        self.responses: list[CompletionResponse] = []
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return len(self.requests)

    def describe(self) -> dict:
        return self.inner.describe()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.requests.append(request)
        response = self.inner.complete(request)
        with self._lock:
            self.responses.append(response)
        return response


_FENCE_RE = re.compile(r"```[\w-]*[ \t]*\n?(.*?)```", re.DOTALL)


def _scan_objects(text: str):
    """Yield every balanced ``{...}`` span, leftmost start first."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:pos + 1]
                    break
        start = text.find("{", start + 1)


def _is_object(candidate: str) -> bool:
    try:
        return isinstance(json.loads(candidate), dict)
    except json.JSONDecodeError:
        return False


def extract_json(completion_text: str) -> str:
    """Return the first parseable top-level JSON object in a completion.

    Code-fenced blocks are searched before the surrounding prose.
    """
    stripped = completion_text.strip()
    if _is_object(stripped):
        return stripped
    regions = [m.group(1) for m in _FENCE_RE.finditer(completion_text)]
    regions.append(completion_text)
    for region in regions:
        for candidate in _scan_objects(region):
            if _is_object(candidate):
                return candidate
    raise ExtractionError("no balanced JSON object found", completion_text[:120])


def complete_json(
    backend: Backend,
    request: CompletionRequest,
    parse: Callable[[str], T],
) -> tuple[T, int]:
    """Complete, extract JSON and parse it, reprompting once on failure.

    Returns the parsed value and the number of backend calls spent (1 or 2).
    ``parse`` signals a schema problem by raising ``CkmaError`` or ``ValueError``.
    """
    response = backend.complete(request)
    try:
        return parse(extract_json(response.text)), 1
    except (CkmaError, ValueError) as exc:
        log.info("JSON recovery failed (%s); reprompting once", exc)
    retry = CompletionRequest(
        system_text=request.system_text,
        user_text=f"{request.user_text}\n\n{REPROMPT_INSTRUCTION}",
        temperature=request.temperature,
        max_output_tokens=request.max_output_tokens,
        model_id=request.model_id,
    )
    response = backend.complete(retry)
    return parse(extract_json(response.text)), 2

