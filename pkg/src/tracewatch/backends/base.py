"""Shared types for generation backends."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Iterator, Protocol

if TYPE_CHECKING:
    from tracewatch.trace import ReasoningTrace


class BackendError(RuntimeError):
    """Base class for generation failures."""


class ConfigurationError(BackendError):
    """Backend or task configuration cannot be resolved."""


class AuthenticationError(BackendError):
    pass


class CapabilityError(BackendError):
    """The backend cannot provide what the caller needs (e.g. logprobs)."""


class ScriptGapError(BackendError):
    """A mock script has no continuation for the requested injection."""


class StreamInterrupted(BackendError):
    """Transport failure after the retry budget was spent."""


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.6
    top_p: float = 0.95
    top_k: int | None = 20
    max_tokens: int = 32768
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be positive (or None for unlimited)")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def with_seed(self, seed: int | None) -> GenerationParams:
        return GenerationParams(self.temperature, self.top_p, self.top_k, self.max_tokens, seed)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


QWEN_PARAMS = GenerationParams(temperature=0.6, top_p=0.95, top_k=20, max_tokens=32768)
PHI4_PARAMS = GenerationParams(temperature=0.8, top_p=0.95, top_k=50, max_tokens=16384)
PRESETS = {"qwen": QWEN_PARAMS, "phi4": PHI4_PARAMS}

TopLogprobs = list[tuple[str, float]]


@dataclass(frozen=True)
class TokenEvent:
    text: str
    top_logprobs: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.top_logprobs is None:
            return
        if len(self.top_logprobs) > 20:
            raise ValueError("at most 20 alternatives per token")
        lps = [lp for _, lp in self.top_logprobs]
        if any(lp > 0 or math.isnan(lp) for lp in lps):
            raise ValueError("logprobs must be <= 0")
        if any(a < b for a, b in zip(lps, lps[1:])):
            raise ValueError("top_logprobs must be sorted in descending order")


@dataclass
class SessionDescriptor:
    backend: str
    params: GenerationParams
    model: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)


class GenerationSession(Protocol):
    """One prompt, any number of continuations.

    ``stream`` and ``continue_from`` return generators; closing a generator
    early cancels that stream and leaves the session usable.
    """

    prompt: str
    descriptor: SessionDescriptor

    def stream(self) -> Iterator[TokenEvent]: ...

    def continue_from(self, trace: ReasoningTrace) -> Iterator[TokenEvent]: ...

    def probe_next_distribution(self, trace: ReasoningTrace, forced_suffix: str) -> TopLogprobs: ...

    def close(self) -> None: ...
