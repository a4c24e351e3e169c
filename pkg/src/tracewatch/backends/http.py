"""Client for OpenAI-compatible chat-completion endpoints.

Continuations re-submit the whole amended trace as an assistant prefill
(``continue_final_message``), so no server-side session state is needed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Any, Iterator

import httpx

from tracewatch.backends.base import (
    AuthenticationError,
    BackendError,
    CapabilityError,
    ConfigurationError,
    GenerationParams,
    SessionDescriptor,
    StreamInterrupted,
    TokenEvent,
    TopLogprobs,
)
from tracewatch.trace import ReasoningTrace

log = logging.getLogger(__name__)

_RETRYABLE = (httpx.TransportError, httpx.RemoteProtocolError)


@dataclass
class HttpConfig:
    base_url: str
    api_key: str | None = None
    model: str | None = None
    logprobs: bool = True
    top_logprobs: int = 20
    send_top_k: bool = True
    timeout: float = 600.0
    retries: int = 3
    backoff: float = 1.0


def parse_sse_lines(lines: Iterator[str]) -> Iterator[dict[str, Any]]:
    """Decode ``data:`` payloads of a server-sent-event stream until ``[DONE]``."""
    buf: list[str] = []
    for line in lines:
        if line.startswith(":"):
            continue
        if line.startswith("data:"):
            buf.append(line[5:].lstrip())
            continue
        if line.strip() == "" and buf:
            data = "\n".join(buf)
            buf = []
            if data.strip() == "[DONE]":
                return
            yield json.loads(data)
    if buf:
        data = "\n".join(buf)
        if data.strip() != "[DONE]":
            yield json.loads(data)


def _events_from_chunk(chunk: dict[str, Any]) -> Iterator[TokenEvent]:
    for choice in chunk.get("choices", []):
        delta = choice.get("delta") or {}
        content = delta.get("content")
        lp = (choice.get("logprobs") or {}).get("content") or []
        if lp:
            for item in lp:
                alts = item.get("top_logprobs") or []
                table = sorted(((a["token"], min(0.0, float(a["logprob"]))) for a in alts), key=lambda x: -x[1])
                yield TokenEvent(item.get("token", ""), tuple(table[:20]) if table else None)
        elif content:
            yield TokenEvent(content)


class HttpSession:
    def __init__(self, config: HttpConfig, params: GenerationParams, prompt: str, client: httpx.Client) -> None:
        self.config = config
        self.params = params
        self.prompt = prompt
        self._client = client
        self.descriptor = SessionDescriptor("http", params, config.model, {"base_url": config.base_url})
        self._closed = False

    # -- request building -----------------------------------------------
    def _headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json"}
        if self.config.api_key:
            h["Authorization"] = f"Bearer {self.config.api_key}"
        return h

    def _body(self, prefill: str | None, *, stream: bool, max_tokens: int | None = None) -> dict[str, Any]:
        messages: list[dict[str, str]] = [{"role": "user", "content": self.prompt}]
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": messages,
            "stream": stream,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": max_tokens or self.params.max_tokens,
        }
        if self.params.seed is not None:
            body["seed"] = self.params.seed
        if self.config.send_top_k and self.params.top_k is not None:
            body["top_k"] = self.params.top_k
        if self.config.logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = min(20, self.config.top_logprobs)
        if prefill:
            messages.append({"role": "assistant", "content": prefill})
            body["continue_final_message"] = True
            body["add_generation_prompt"] = False
        return body

    def _raise_for_status(self, resp: httpx.Response) -> None:
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"endpoint rejected credentials ({resp.status_code})")
        if resp.status_code >= 400:
            resp.read()
            raise BackendError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")

    # -- streaming --------------------------------------------------------
    def _generate(self, prefill: str) -> Iterator[TokenEvent]:
        url = self.config.base_url.rstrip("/") + "/v1/chat/completions"
        produced = ""
        attempt = 0
        while True:
            try:
                body = self._body(prefill + produced, stream=True)
                with self._client.stream("POST", url, json=body, headers=self._headers()) as resp:
                    self._raise_for_status(resp)
                    for chunk in parse_sse_lines(resp.iter_lines()):
                        for ev in _events_from_chunk(chunk):
                            produced += ev.text
                            yield ev
                return
            except _RETRYABLE as exc:
                attempt += 1
                if attempt > self.config.retries:
                    raise StreamInterrupted(f"stream failed after {self.config.retries} retries: {exc}") from exc
                delay = self.config.backoff * 2 ** (attempt - 1)
                log.warning("stream interrupted (%s); retry %d in %.1fs", exc, attempt, delay)
                time.sleep(delay)

    def stream(self) -> Iterator[TokenEvent]:
        return self._generate("")

    def continue_from(self, trace: ReasoningTrace) -> Iterator[TokenEvent]:
        if trace.prompt != self.prompt:
            raise ValueError("amended trace belongs to a different prompt")
        return self._generate(trace.text)

    def probe_next_distribution(self, trace: ReasoningTrace, forced_suffix: str) -> TopLogprobs:
        if not self.config.logprobs:
            raise CapabilityError("logprobs are disabled for this endpoint")
        url = self.config.base_url.rstrip("/") + "/v1/chat/completions"
        body = self._body(trace.text + forced_suffix, stream=False, max_tokens=1)
        resp = self._client.post(url, json=body, headers=self._headers())
        self._raise_for_status(resp)
        choices = resp.json().get("choices") or [{}]
        content = (choices[0].get("logprobs") or {}).get("content")
        if not content:
            raise CapabilityError("endpoint returned no logprobs")
        alts = content[0].get("top_logprobs") or []
        return sorted(((a["token"], min(0.0, float(a["logprob"]))) for a in alts), key=lambda x: -x[1])

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._client.close()


def open_http_session(
    config: HttpConfig, params: GenerationParams, prompt: str, *, transport: httpx.BaseTransport | None = None
) -> HttpSession:
    """Open a session, probing ``/v1/models`` so bad credentials fail before any token."""
    if not config.base_url:
        raise ConfigurationError("no base URL configured (set INTERWHEN_BASE_URL)")
    client = httpx.Client(timeout=config.timeout, transport=transport)
    session = HttpSession(config, params, prompt, client)
    try:
        resp = client.get(config.base_url.rstrip("/") + "/v1/models", headers=session._headers())
    except httpx.TransportError as exc:
        client.close()
        raise ConfigurationError(f"endpoint unreachable: {exc}") from exc
    if resp.status_code in (401, 403):
        client.close()
        raise AuthenticationError(f"endpoint rejected credentials ({resp.status_code})")
    if config.model is None and resp.status_code == 200:
        data = resp.json().get("data") or []
        if data:
            config.model = data[0].get("id")
            session.descriptor.model = config.model
    return session
