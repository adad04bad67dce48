"""Provider-agnostic chat-completion client with retries and a test stub.

All generator/judge/eval traffic goes through `ChatClient.complete`, which
speaks the common chat-completions JSON shape. Judge and evaluation calls
default to greedy decoding; the stub transport makes every pipeline stage
runnable offline and deterministically.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import httpx

Message = tuple[str, str]  # (role, content)


class LlmClientError(Exception):
    pass


class EndpointUnreachable(LlmClientError):
    pass


class NonRetryableStatus(LlmClientError):
    def __init__(self, code: int, detail: str = ""):
        super().__init__(f"endpoint returned status {code}: {detail}")
        self.code = code


class RetriesExhausted(LlmClientError):
    pass


class EmptyResponse(LlmClientError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = ""
    temperature: float = 0.0
    max_tokens: int = 2048
    greedy: bool = True
    max_in_flight: int = 4
    retry_limit: int = 3
    timeout: float = 60.0
    backoff_base: float = 0.25

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")


@dataclass(frozen=True)
class ChatExchange:
    request_messages: tuple[Message, ...]
    response_text: str
    model_name: str
    latency_ms: int
    attempt: int


# A transport takes (url, payload, headers, timeout) and returns
# (status_code, parsed_json_body). Connection-level failures raise
# ConnectionError; timeouts raise TimeoutError.
Transport = Callable[[str, dict, dict, float], tuple[int, dict]]


class HttpTransport:
    def __init__(self):
        self._client = httpx.Client()

    def __call__(self, url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
        try:
            resp = self._client.post(url, json=payload, headers=headers, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TimeoutError(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ConnectionError(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = {}
        return resp.status_code, body


class StubTransport:
    """Deterministic in-process endpoint: request content -> canned response.

    `failures` makes the first N calls fail with `fail_status` (retry tests);
    the in-flight counters let tests assert the client's concurrency bound.
    """

    def __init__(
        self,
        responder: Optional[Callable[[dict], str]] = None,
        *,
        failures: int = 0,
        fail_status: int = 500,
        latency: float = 0.0,
    ):
        self.responder = responder or (lambda payload: "OK")
        self.failures = failures
        self.fail_status = fail_status
        self.latency = latency
        self.calls: list[dict] = []
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self._lock = threading.Lock()

    def __call__(self, url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            self.calls.append(payload)
            should_fail = self.failures > 0
            if should_fail:
                self.failures -= 1
        try:
            if self.latency:
                time.sleep(self.latency)
            if should_fail:
                return self.fail_status, {"error": "stubbed failure"}
            text = self.responder(payload)
            return 200, {"choices": [{"message": {"role": "assistant", "content": text}}]}
        finally:
            with self._lock:
                self.in_flight -= 1


def request_digest(payload: dict) -> str:
    """Stable hash of a request body; stubs key canned responses off this."""
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


class ChatClient:
    """Shareable client; bounds concurrent requests at cfg.max_in_flight."""

    def __init__(self, cfg: EndpointConfig, transport: Optional[Transport] = None):
        self.cfg = cfg
        self.transport: Transport = transport if transport is not None else HttpTransport()
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key_env_var:
            key = os.environ.get(self.cfg.api_key_env_var)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: Sequence[Message]) -> ChatExchange:
        if not messages:
            raise ValueError("messages must be non-empty")
        if messages[0][0] not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        cfg = self.cfg
        payload = {
            "model": cfg.model_name,
            "messages": [{"role": role, "content": content} for role, content in messages],
            "temperature": 0.0 if cfg.greedy else cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        headers = self._headers()

        last_failure = ""
        with self._slots:
            for attempt in range(1, cfg.retry_limit + 2):
                started = time.monotonic()
                try:
                    status, body = self.transport(url, payload, headers, cfg.timeout)
                except TimeoutError as exc:
                    last_failure = f"timeout: {exc}"
                    self._sleep(attempt)
                    continue
                except ConnectionError as exc:
                    raise EndpointUnreachable(f"{url}: {exc}") from exc
                latency_ms = max(0, int((time.monotonic() - started) * 1000))
                if status == 429 or status >= 500:
                    last_failure = f"status {status}"
                    self._sleep(attempt)
                    continue
                if status != 200:
                    raise NonRetryableStatus(status, json.dumps(body)[:200])
                text = _first_choice_text(body)
                if not text:
                    raise EmptyResponse(f"no content in response from {url}")
                return ChatExchange(
                    request_messages=tuple(messages),
                    response_text=text,
                    model_name=cfg.model_name,
                    latency_ms=latency_ms,
                    attempt=attempt,
                )
        raise RetriesExhausted(f"{url}: gave up after {cfg.retry_limit + 1} attempts ({last_failure})")

    def _sleep(self, attempt: int) -> None:
        if self.cfg.backoff_base > 0 and attempt <= self.cfg.retry_limit:
            time.sleep(self.cfg.backoff_base * (2 ** (attempt - 1)))


def _first_choice_text(body: dict) -> str:
    choices = body.get("choices") or []
    if not choices:
        return ""
    message = choices[0].get("message") or {}
    return message.get("content") or ""


def complete(cfg: EndpointConfig, messages: Sequence[Message], transport: Optional[Transport] = None) -> ChatExchange:
    return ChatClient(cfg, transport).complete(messages)
