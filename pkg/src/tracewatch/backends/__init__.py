"""Generation backends: scripted mock, OpenAI-compatible HTTP, and plain functions."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from tracewatch.backends.base import (
    PHI4_PARAMS,
    PRESETS,
    QWEN_PARAMS,
    AuthenticationError,
    BackendError,
    CapabilityError,
    ConfigurationError,
    GenerationParams,
    GenerationSession,
    ScriptGapError,
    StreamInterrupted,
    TokenEvent,
)
from tracewatch.backends.mock import FunctionSession, MockScript, MockSession, load_script_file, select_script, tokenize

__all__ = [
    "AuthenticationError",
    "BackendConfig",
    "BackendError",
    "CapabilityError",
    "ConfigurationError",
    "GenerationParams",
    "GenerationSession",
    "PHI4_PARAMS",
    "PRESETS",
    "QWEN_PARAMS",
    "ScriptGapError",
    "StreamInterrupted",
    "TokenEvent",
    "open_session",
    "tokenize",
]


@dataclass
class BackendConfig:
    """Where completions come from.

    ``kind`` is ``"mock"`` (``script`` dict or ``script_path``), ``"http"``
    (``base_url``/``api_key``/``model``, defaulting to the ``INTERWHEN_*``
    environment variables) or ``"function"`` (``fn(prompt, seed) -> str``).
    """

    kind: str = "mock"
    script: dict[str, Any] | None = None
    script_path: str | None = None
    base_url: str | None = None
    api_key: str | None = None
    model: str | None = None
    logprobs: bool = True
    timeout: float = 600.0
    retries: int = 3
    fn: Callable[[str, int | None], str] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> BackendConfig:
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__ and k not in ("fn", "extra")}
        extra = {k: v for k, v in data.items() if k not in cls.__dataclass_fields__}
        return cls(**known, extra=extra)


def open_session(config: BackendConfig, params: GenerationParams, prompt: str, *, transport=None) -> GenerationSession:
    if config.kind == "mock":
        data = config.script
        if data is None:
            if not config.script_path:
                raise ConfigurationError("mock backend needs a script or script_path")
            data = load_script_file(Path(config.script_path))
        script = MockScript.from_dict(select_script(data, prompt, params.seed))
        return MockSession(script, prompt, params)
    if config.kind == "function":
        if config.fn is None:
            raise ConfigurationError("function backend needs fn")
        return FunctionSession(config.fn, prompt, params)
    if config.kind == "http":
        from tracewatch.backends.http import HttpConfig, open_http_session

        http = HttpConfig(
            base_url=config.base_url or os.environ.get("INTERWHEN_BASE_URL", ""),
            api_key=config.api_key or os.environ.get("INTERWHEN_API_KEY"),
            model=config.model or os.environ.get("INTERWHEN_MODEL"),
            logprobs=config.logprobs,
            timeout=config.timeout,
            retries=config.retries,
        )
        return open_http_session(http, params, prompt, transport=transport)
    raise ConfigurationError(f"unknown backend kind {config.kind!r}")
