from __future__ import annotations

import json

import httpx
import pytest

from tracewatch.backends import ConfigurationError, GenerationParams
from tracewatch.backends.base import AuthenticationError, BackendError, CapabilityError, StreamInterrupted
from tracewatch.backends.http import HttpConfig, open_http_session, parse_sse_lines
from tracewatch.trace import ReasoningTrace


def sse(*chunks: dict) -> bytes:
    body = "".join(f"data: {json.dumps(c)}\n\n" for c in chunks)
    return (body + "data: [DONE]\n\n").encode()


def delta(text: str, alts=None) -> dict:
    choice: dict = {"delta": {"content": text}}
    if alts is not None:
        choice["logprobs"] = {"content": [{"token": text, "top_logprobs": [{"token": t, "logprob": lp} for t, lp in alts]}]}
    return {"choices": [choice]}


class Server:
    """Records requests and replays canned chat-completion responses."""

    def __init__(self, stream_bodies=(), probe=None, models_status=200, chat_status=200):
        self.requests: list[dict] = []
        self.stream_bodies = list(stream_bodies)
        self.probe = probe
        self.models_status = models_status
        self.chat_status = chat_status
        self.auth: list[str | None] = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.auth.append(request.headers.get("Authorization"))
        if request.url.path == "/v1/models":
            return httpx.Response(self.models_status, json={"data": [{"id": "served-model"}]})
        body = json.loads(request.content)
        self.requests.append(body)
        if self.chat_status != 200:
            return httpx.Response(self.chat_status, text="nope")
        if not body["stream"]:
            return httpx.Response(200, json=self.probe)
        item = self.stream_bodies.pop(0)
        if isinstance(item, Exception):
            raise item
        return httpx.Response(200, content=item, headers={"Content-Type": "text/event-stream"})


def open_with(server: Server, **cfg):
    config = HttpConfig(base_url="http://test", backoff=0.0, **cfg)
    return open_http_session(config, GenerationParams(seed=7), "solve it", transport=httpx.MockTransport(server))


def test_parse_sse_lines_handles_comments_and_multiline():
    lines = [": keepalive", 'data: {"a":', "data: 1}", "", "data: [DONE]", "", 'data: {"b": 2}', ""]
    assert list(parse_sse_lines(iter(lines))) == [{"a": 1}]


def test_stream_yields_tokens_with_logprobs_and_fills_model():
    server = Server([sse(delta("Hel", [("Hel", -0.1), ("He", -3.0)]), delta("lo"))])
    s = open_with(server, api_key="k")
    events = list(s.stream())
    assert "".join(e.text for e in events) == "Hello"
    assert events[0].top_logprobs == (("Hel", -0.1), ("He", -3.0))
    body = server.requests[0]
    assert body["model"] == "served-model" and body["seed"] == 7 and body["top_k"] == 20
    assert body["logprobs"] is True and body["top_logprobs"] == 20
    assert body["messages"] == [{"role": "user", "content": "solve it"}]
    assert server.auth[0] == "Bearer k"


def test_continue_sends_prefill_as_assistant_message():
    server = Server([sse(delta(" more"))])
    s = open_with(server)
    trace = ReasoningTrace("solve it")
    trace.append_model("so far")
    assert "".join(e.text for e in s.continue_from(trace)) == " more"
    body = server.requests[0]
    assert body["messages"][-1] == {"role": "assistant", "content": "so far"}
    assert body["continue_final_message"] is True and body["add_generation_prompt"] is False


def test_continue_rejects_foreign_trace():
    s = open_with(Server())
    with pytest.raises(ValueError):
        s.continue_from(ReasoningTrace("other prompt"))


def test_retry_resumes_from_produced_text():
    server = Server([httpx.ConnectError("boom"), sse(delta("ok"))])
    s = open_with(server, retries=2)
    assert "".join(e.text for e in s.stream()) == "ok"
    assert len(server.requests) == 2


def test_retries_exhausted_raise_stream_interrupted():
    server = Server([httpx.ConnectError("x")] * 3)
    s = open_with(server, retries=2)
    with pytest.raises(StreamInterrupted):
        list(s.stream())


def test_unauthorized_at_open():
    with pytest.raises(AuthenticationError):
        open_with(Server(models_status=401))


def test_server_error_is_backend_error():
    s = open_with(Server(chat_status=500))
    with pytest.raises(BackendError):
        list(s.stream())


def test_unreachable_endpoint_is_configuration_error():
    def refuse(request):
        raise httpx.ConnectError("refused")

    config = HttpConfig(base_url="http://test")
    with pytest.raises(ConfigurationError):
        open_http_session(config, GenerationParams(), "p", transport=httpx.MockTransport(refuse))
    with pytest.raises(ConfigurationError):
        open_http_session(HttpConfig(base_url=""), GenerationParams(), "p")


def test_probe_reads_sorted_top_logprobs():
    probe = {"choices": [{"logprobs": {"content": [{"token": "B", "top_logprobs": [
        {"token": "A", "logprob": -1.2}, {"token": "B", "logprob": -0.4}]}]}}]}
    server = Server(probe=probe)
    s = open_with(server)
    trace = ReasoningTrace("solve it")
    trace.append_model("thinking")
    assert s.probe_next_distribution(trace, "</think>") == [("B", -0.4), ("A", -1.2)]
    body = server.requests[0]
    assert body["max_tokens"] == 1 and body["messages"][-1]["content"] == "thinking</think>"


def test_probe_without_logprobs_is_capability_error():
    s = open_with(Server(probe={"choices": [{"message": {"content": "x"}}]}))
    with pytest.raises(CapabilityError):
        s.probe_next_distribution(ReasoningTrace("solve it"), "</think>")
    s2 = open_with(Server(), logprobs=False)
    with pytest.raises(CapabilityError):
        s2.probe_next_distribution(ReasoningTrace("solve it"), "</think>")
