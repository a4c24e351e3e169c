"""Internal-verification stoppers: k-stable answers, entropy (EAT) and confidence (DEER).

Stoppers report ``Verdict(passed=True)`` when their stop criterion is met;
the monitor turns that into a single ``</think>`` injection.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from tracewatch.extraction import ExtractedState
from tracewatch.trace import END_THINK, ReasoningTrace, Verdict


class MonitorError(RuntimeError):
    """A monitor could not reach a decision (e.g. its judge failed)."""


class Decision(str, enum.Enum):
    CONTINUE = "CONTINUE"
    STOP = "STOP"


class EquivalenceMode(str, enum.Enum):
    EXACT = "EXACT"
    NORMALIZED = "NORMALIZED"
    PLUGGABLE = "PLUGGABLE"


_TRAILING_PUNCT = re.compile(r"[\s.,;:!?]+$")


def normalize_payload(text: str) -> str:
    return _TRAILING_PUNCT.sub("", " ".join(text.casefold().split()))


@dataclass(frozen=True)
class EquivalenceChecker:
    """Decides whether two consecutive payloads count as the same answer.

    ``judge`` (PLUGGABLE mode) is any callable returning a bool, typically a
    wrapper around a chat endpoint. It is called with its arguments in sorted
    order so that the relation stays symmetric.
    """

    mode: EquivalenceMode = EquivalenceMode.NORMALIZED
    judge: Callable[[str, str], bool] | None = None

    def __post_init__(self) -> None:
        if self.mode is EquivalenceMode.PLUGGABLE and self.judge is None:
            raise ValueError("PLUGGABLE equivalence needs a judge")

    def equivalent(self, a: str, b: str) -> bool:
        if a == b:
            return True
        if self.mode is EquivalenceMode.EXACT:
            return False
        if self.mode is EquivalenceMode.NORMALIZED:
            return normalize_payload(a) == normalize_payload(b)
        if normalize_payload(a) == normalize_payload(b):
            return True
        x, y = sorted((a, b))
        try:
            return bool(self.judge(x, y))
        except Exception as exc:  # the run must abort, not silently fall back
            raise MonitorError(f"equivalence judge failed: {exc}") from exc


@dataclass
class StabilityCounter:
    k: int
    checker: EquivalenceChecker = field(default_factory=EquivalenceChecker)
    last_payload: str | None = None
    streak: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")


def kstable_update(counter: StabilityCounter, payload: str) -> Decision:
    if counter.last_payload is not None and counter.checker.equivalent(counter.last_payload, payload):
        counter.streak = min(counter.streak + 1, counter.k)
    else:
        counter.streak = 1
    counter.last_payload = payload
    return Decision.STOP if counter.streak >= counter.k else Decision.CONTINUE


class SpecKind(str, enum.Enum):
    PRE = "PRE"
    POST = "POST"


def dual_counter_update(pre: StabilityCounter, post: StabilityCounter, kind: SpecKind | str, payload: str) -> Decision:
    if pre.k != post.k:
        raise ValueError("both counters must share k")
    counter = pre if SpecKind(kind) is SpecKind.PRE else post
    kstable_update(counter, payload)
    return Decision.STOP if pre.streak >= pre.k and post.streak >= post.k else Decision.CONTINUE


def stopping_time(payloads: Sequence[str], k: int, checker: EquivalenceChecker | None = None) -> int | None:
    """1-based index at which k-stable stopping fires, or None."""
    counter = StabilityCounter(k, checker or EquivalenceChecker())
    for i, p in enumerate(payloads, 1):
        if kstable_update(counter, p) is Decision.STOP:
            return i
    return None


def _payload_text(state: ExtractedState) -> str:
    p = state.payload
    return getattr(p, "body", p) if not isinstance(p, str) else p


@dataclass
class KStableVerifier:
    """Per-run stopper over answer, equation or artifact states."""

    k: int = 2
    checker: EquivalenceChecker = field(default_factory=EquivalenceChecker)

    def __post_init__(self) -> None:
        self.counter = StabilityCounter(self.k, self.checker)

    def verify(self, state: ExtractedState) -> Verdict:
        decision = kstable_update(self.counter, _payload_text(state))
        return Verdict(decision is Decision.STOP)


@dataclass
class DualStableVerifier:
    """Stops once both the pre- and post-condition artifacts have been stable for k proposals."""

    k: int = 2
    checker: EquivalenceChecker = field(default_factory=EquivalenceChecker)

    def __post_init__(self) -> None:
        self.pre = StabilityCounter(self.k, self.checker)
        self.post = StabilityCounter(self.k, self.checker)

    def verify(self, state: ExtractedState) -> Verdict:
        family = getattr(state.payload, "family", "pre")
        kind = SpecKind.POST if family.lower().startswith("post") else SpecKind.PRE
        decision = dual_counter_update(self.pre, self.post, kind, _payload_text(state))
        return Verdict(decision is Decision.STOP)


# ---------------------------------------------------------------------------
# entropy and confidence probes

def shannon_entropy(dist: Sequence[tuple[str, float]]) -> float:
    """Entropy in nats of the distribution renormalised over the given alternatives."""
    if not dist:
        raise ValueError("empty distribution")
    lps = [lp for _, lp in dist]
    if any(lp > 0 for lp in lps):
        raise ValueError("logprobs must be <= 0")
    top = max(lps)
    if top == -math.inf:
        raise ValueError("distribution has no mass")
    # log-sum-exp for the normaliser
    log_z = top + math.log(math.fsum(math.exp(lp - top) for lp in lps))
    terms = []
    for lp in lps:
        if lp == -math.inf:
            continue
        lq = lp - log_z
        terms.append(-math.exp(lq) * lq)
    h = math.fsum(terms)
    return max(h, 0.0)


@dataclass
class EntropyTracker:
    threshold: float
    alpha: float = 0.3
    ema: float = 0.0
    initialized: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")

    def update(self, h: float) -> Decision:
        if not self.initialized:
            self.ema, self.initialized = h, True
        else:
            self.ema = self.alpha * h + (1 - self.alpha) * self.ema
        return Decision.STOP if self.ema < self.threshold else Decision.CONTINUE


EAT_SUFFIX = END_THINK


def eat_step(tracker: EntropyTracker, session, trace: ReasoningTrace, suffix: str = EAT_SUFFIX) -> Decision:
    dist = session.probe_next_distribution(trace, suffix)
    if not dist:
        return Decision.CONTINUE
    return tracker.update(shannon_entropy(dist))


class Aggregation(str, enum.Enum):
    GEOMETRIC_MEAN = "GEOMETRIC_MEAN"
    MIN = "MIN"


@dataclass(frozen=True)
class DeerConfig:
    threshold: float
    probe_suffix: str = "</think> The answer is"
    aggregation: Aggregation = Aggregation.GEOMETRIC_MEAN
    max_answer_tokens: int = 8

    def __post_init__(self) -> None:
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


def aggregate_confidence(logprobs: Sequence[float], aggregation: Aggregation = Aggregation.GEOMETRIC_MEAN) -> float:
    if not logprobs:
        return 0.0
    if aggregation is Aggregation.MIN:
        return math.exp(min(logprobs))
    return math.exp(math.fsum(logprobs) / len(logprobs))


def deer_confidence(config: DeerConfig, session, trace: ReasoningTrace) -> tuple[str, float]:
    """Greedy answer read-out after the probe suffix: (answer text, confidence)."""
    answer, lps = "", []
    for _ in range(config.max_answer_tokens):
        dist = session.probe_next_distribution(trace, config.probe_suffix + answer)
        if not dist:
            break
        tok, lp = max(dist, key=lambda t: t[1])
        if answer.strip() and (tok.strip() in ("", ".") or "\n" in tok):
            break
        answer += tok
        if tok.strip():
            lps.append(lp)
    return answer.strip(), aggregate_confidence(lps, config.aggregation)


def deer_probe(config: DeerConfig, session, trace: ReasoningTrace) -> Decision:
    _, conf = deer_confidence(config, session, trace)
    return Decision.STOP if conf > config.threshold else Decision.CONTINUE


_BLANK_RUN = re.compile(r"\n(?:[ \t]*\n)+")
_CONFIRM = re.compile(r"[ \t]*\S")


def chunk_boundaries(text: str, cursor: int = 0, *, final: bool = True) -> list[int]:
    """Offsets just past each blank-line paragraph break at or after ``cursor``.

    A break is a run of two or more newlines; its boundary is confirmed once a
    non-newline character follows it (or, with ``final``, at end of text).
    """
    out = []
    for m in _BLANK_RUN.finditer(text, cursor):
        # whitespace-only tails may still grow into a longer break
        if final or _CONFIRM.match(text, m.end()):
            out.append(m.end())
    return out


BoundaryRule = Callable[[str, int, bool], list[int]]


def make_eat_probe(threshold: float, alpha: float = 0.3, suffix: str = EAT_SUFFIX):
    """Probe-monitor factory for the monitor loop."""

    def factory():
        tracker = EntropyTracker(threshold, alpha)
        return lambda session, trace: eat_step(tracker, session, trace, suffix)

    return factory


def make_deer_probe(config: DeerConfig):
    def factory():
        return lambda session, trace: deer_probe(config, session, trace)

    return factory
