"""Sequential verification over a single streaming trace.

Each model token is appended to the trace, every binding's extractors scan
the new text, each newly completed state is verified once, and the first
non-CONTINUE action is applied before any further model token is consumed.
Probe monitors (EAT, DEER) run at paragraph boundaries instead of states.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Protocol, Sequence

from tracewatch.backends.base import BackendError
from tracewatch.extraction import ExtractedState, Extractor
from tracewatch.stopping import Decision, MonitorError, chunk_boundaries
from tracewatch.trace import (
    CONTINUE,
    DEFAULT_ANSWER_PROMPT,
    DEFAULT_FEEDBACK_PREFIX,
    END_THINK,
    ActionKind,
    InterventionAction,
    Origin,
    ReasoningTrace,
    Verdict,
    apply_intervention,
    scan_for_states,
)

log = logging.getLogger(__name__)

FALLBACK_FEEDBACK = "this step does not pass verification. Let me redo it carefully."


class StateVerifier(Protocol):
    def verify(self, state: ExtractedState) -> Verdict: ...


def feedback_policy(verdict: Verdict) -> InterventionAction:
    """External verifiers: failing states get their feedback injected."""
    if verdict.passed:
        return CONTINUE
    return InterventionAction(ActionKind.INJECT_TEXT, verdict.feedback or FALLBACK_FEEDBACK)


def stop_policy(verdict: Verdict) -> InterventionAction:
    """Stoppers: a met criterion closes the think region."""
    return InterventionAction(ActionKind.INJECT_END_THINK) if verdict.passed else CONTINUE


@dataclass
class VerifierBinding:
    """Extractor(s) feeding one verifier, plus the policy applied to its verdicts.

    ``verifier_factory`` is called once per run so verifier state (accepted
    history, stability counters) never leaks between runs.
    """

    name: str
    extractors: Sequence[Extractor]
    verifier_factory: Callable[[], StateVerifier]
    policy: Callable[[Verdict], InterventionAction] = feedback_policy
    max_interventions: int = 3
    stopper: bool = False
    verifier_id: str = ""

    def __post_init__(self) -> None:
        if self.max_interventions < 1:
            raise ValueError("max_interventions must be positive")
        if not self.extractors:
            raise ValueError("a binding needs at least one extractor")
        self.extractors = tuple(self.extractors)

    @property
    def extractor_id(self) -> str:
        return ",".join(ex.name for ex in self.extractors)

    @classmethod
    def external(cls, name: str, extractor: Extractor, factory: Callable[[], StateVerifier], **kw) -> VerifierBinding:
        return cls(name, (extractor,), factory, feedback_policy, **kw)

    @classmethod
    def stopping(cls, name: str, extractors: Extractor | Sequence[Extractor], factory, **kw) -> VerifierBinding:
        exs = (extractors,) if not isinstance(extractors, (list, tuple)) else extractors
        return cls(name, exs, factory, stop_policy, stopper=True, **kw)


@dataclass
class ProbeBinding:
    """A monitor that probes the backend at chunk boundaries (EAT, DEER)."""

    name: str
    factory: Callable[[], Callable[[Any, ReasoningTrace], Decision]]
    boundaries: Callable[..., list[int]] = chunk_boundaries


@dataclass(frozen=True)
class MonitorLimits:
    max_total_tokens: int = 32768
    max_wall_seconds: float = 3600.0

    def __post_init__(self) -> None:
        if self.max_total_tokens <= 0 or self.max_wall_seconds <= 0:
            raise ValueError("limits must be strictly positive")


class RunStatus(str, enum.Enum):
    COMPLETED = "COMPLETED"
    HALTED = "HALTED"
    TRUNCATED = "TRUNCATED"
    FAILED = "FAILED"


@dataclass
class LogEntry:
    binding: str
    kind: str
    span: tuple[int, int]
    state_text: str
    passed: bool
    feedback: str | None
    action: ActionKind
    payload: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "binding": self.binding,
            "kind": self.kind,
            "span": list(self.span),
            "state_text": self.state_text,
            "passed": self.passed,
            "feedback": self.feedback,
            "action": self.action.value,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LogEntry:
        return cls(
            d["binding"], d["kind"], tuple(d["span"]), d["state_text"], d["passed"], d["feedback"],
            ActionKind(d["action"]), d.get("payload"),
        )


@dataclass
class RunOutcome:
    trace: ReasoningTrace
    status: RunStatus
    halted_reason: str | None = None
    verdict_log: list[LogEntry] = field(default_factory=list)
    abstained: bool = False
    tokens_consumed: int = 0
    error: str | None = None

    @property
    def interventions(self) -> list[LogEntry]:
        return [e for e in self.verdict_log if e.action is not ActionKind.CONTINUE]


@dataclass
class _Pending:
    binding: int
    state: ExtractedState


class _Run:
    def __init__(
        self,
        session,
        bindings: Sequence[VerifierBinding],
        limits: MonitorLimits,
        probes: Sequence[ProbeBinding],
        feedback_prefix: str,
        answer_prompt: str,
        token_counter,
        clock,
    ) -> None:
        self.session = session
        self.bindings = list(bindings)
        self.limits = limits
        self.probes = list(probes)
        self.feedback_prefix = feedback_prefix
        self.answer_prompt = answer_prompt
        self.token_counter = token_counter
        self.clock = clock
        self.trace = ReasoningTrace(session.prompt)
        self.verifiers = [b.verifier_factory() for b in self.bindings]
        self.probe_fns = [p.factory() for p in self.probes]
        self.probe_cursor = 0
        # offset where the think region closed, natural or injected
        self.close_at: int | None = None
        self.counts = [0] * len(self.bindings)
        self.log: list[LogEntry] = []
        self.abstained = False
        self.consumed = 0
        for i, b in enumerate(self.bindings):
            for j, _ in enumerate(b.extractors):
                self.trace.cursors[self._key(i, j)] = 0

    @staticmethod
    def _key(i: int, j: int) -> str:
        return f"{i}:{j}"

    # -- one scan over all bindings ------------------------------------
    def scan(self, final: bool) -> InterventionAction | None:
        pending: list[_Pending] = []
        for i, b in enumerate(self.bindings):
            for j, ex in enumerate(b.extractors):
                states = scan_for_states(self.trace, ex, key=self._key(i, j), final=final)
                if b.stopper and self.close_at is not None:
                    # stoppers only act on reasoning that precedes the close
                    states = [s for s in states if s.span[1] <= self.close_at]
                pending.extend(_Pending(i, st) for st in states)
        pending.sort(key=lambda p: (p.state.span[1], p.state.span[0], p.binding))
        for p in pending:
            action = self._verify(p)
            if action.kind is not ActionKind.CONTINUE:
                # later states in this batch came from text that is now cut or superseded
                return action
        return None

    def _verify(self, p: _Pending) -> InterventionAction:
        b = self.bindings[p.binding]
        verdict = self.verifiers[p.binding].verify(p.state).with_span(p.state.span)
        action = b.policy(verdict)
        if action.kind is ActionKind.INJECT_TEXT:
            self.counts[p.binding] += 1
            if self.counts[p.binding] > b.max_interventions:
                action = InterventionAction(ActionKind.HALT)
                self.abstained = True
        self.log.append(
            LogEntry(b.name, p.state.kind.value, p.state.span, p.state.text, verdict.passed, verdict.feedback,
                     action.kind, action.payload)
        )
        if action.kind is not ActionKind.CONTINUE:
            self._apply(action, p.state.span)
        return action

    def _apply(self, action: InterventionAction, span: tuple[int, int]) -> None:
        if self.close_at is not None and span[1] <= self.close_at:
            # the cut removes a natural close that arrived in the same chunk
            self.trace.think_closed = False
            self.close_at = None
        apply_intervention(
            self.trace,
            action,
            span,
            feedback_prefix=self.feedback_prefix,
            answer_prompt=self.answer_prompt,
            token_counter=self.token_counter,
        )
        if action.kind is ActionKind.INJECT_END_THINK:
            self.close_at = len(self.trace)
        # an injection invalidates pending paragraph boundaries
        self.probe_cursor = min(self.probe_cursor, len(self.trace)) if action.kind is ActionKind.HALT else len(self.trace)

    def run_probes(self) -> InterventionAction | None:
        if not self.probes:
            return None
        text = self.trace.text
        limit = len(text) if self.close_at is None else self.close_at
        for probe, fn in zip(self.probes, self.probe_fns):
            bounds = [b for b in probe.boundaries(text, self.probe_cursor, final=False) if b <= limit]
            for b in bounds:
                decision = fn(self.session, self.trace.prefix(b))
                stop = decision is Decision.STOP
                self.log.append(
                    LogEntry(probe.name, "CHUNK_BOUNDARY", (b, b), "", stop, None,
                             ActionKind.INJECT_END_THINK if stop else ActionKind.CONTINUE)
                )
                if stop:
                    action = InterventionAction(ActionKind.INJECT_END_THINK)
                    self._apply(action, (b, b))
                    return action
        bounds = [b for probe in self.probes for b in probe.boundaries(text, self.probe_cursor, final=False)]
        if bounds:
            self.probe_cursor = max(bounds)
        if self.close_at is not None:
            self.probe_cursor = max(self.probe_cursor, len(text))
        return None

    def note_natural_close(self, before: int) -> None:
        if self.trace.think_closed:
            return
        start = max(0, before - len(END_THINK) + 1)
        at = self.trace.text.find(END_THINK, start)
        if at >= 0:
            self.trace.think_closed = True
            self.close_at = at


def run_monitored_generation(
    session,
    bindings: Sequence[VerifierBinding],
    limits: MonitorLimits | None = None,
    *,
    probes: Sequence[ProbeBinding] = (),
    feedback_prefix: str = DEFAULT_FEEDBACK_PREFIX,
    answer_prompt: str = DEFAULT_ANSWER_PROMPT,
    token_counter: Callable[[str], int] | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> RunOutcome:
    """Stream a generation while verifying every extracted state.

    With no bindings and no probes this is plain playback.
    """
    limits = limits or MonitorLimits()
    run = _Run(session, bindings, limits, probes, feedback_prefix, answer_prompt, token_counter, clock)
    trace = run.trace
    started = clock()
    events: Iterator = session.stream()

    def outcome(status: RunStatus, reason: str | None = None, error: str | None = None) -> RunOutcome:
        close = getattr(events, "close", None)
        if close:
            close()
        return RunOutcome(trace, status, reason, run.log, run.abstained, run.consumed, error)

    try:
        while True:
            try:
                ev = next(events)
            except StopIteration:
                action = run.scan(final=True)
                if action is None:
                    return outcome(RunStatus.COMPLETED)
                if action.kind is ActionKind.HALT:
                    return outcome(RunStatus.HALTED, "max_interventions exhausted; abstaining")
                events = session.continue_from(trace)
                continue
            before = len(trace)
            trace.append_model(ev.text)
            run.consumed += 1
            run.note_natural_close(before)
            action = run.scan(final=False) or run.run_probes()
            if action is not None:
                events.close()
                if action.kind is ActionKind.HALT:
                    return outcome(RunStatus.HALTED, "max_interventions exhausted; abstaining")
                events = session.continue_from(trace)
            if run.consumed >= limits.max_total_tokens:
                return outcome(RunStatus.TRUNCATED, f"token limit {limits.max_total_tokens} reached")
            if clock() - started > limits.max_wall_seconds:
                return outcome(RunStatus.TRUNCATED, f"wall-time limit {limits.max_wall_seconds}s reached")
    except (BackendError, MonitorError) as exc:
        log.warning("run failed: %s", exc)
        return outcome(RunStatus.FAILED, type(exc).__name__, str(exc))


def playback(session, limits: MonitorLimits | None = None) -> RunOutcome:
    """Unmonitored generation."""
    return run_monitored_generation(session, [], limits)


# ---------------------------------------------------------------------------
# from-scratch re-verification

@dataclass
class ReverifyFailure:
    binding: str
    span: tuple[int, int]
    state_text: str
    feedback: str | None


def _model_regions(trace: ReasoningTrace) -> list[tuple[int, int, bool]]:
    """(start, end, ends_at_feedback) for every maximal run of model text."""
    regions, pos, start = [], 0, 0
    for seg in trace.segments:
        end = pos + len(seg.text)
        if seg.origin is Origin.INTERVENTION:
            if pos > start:
                regions.append((start, pos, not seg.text.startswith(END_THINK)))
            start = end
        pos = end
    if pos > start:
        regions.append((start, pos, False))
    return regions


def emitted_states(trace: ReasoningTrace, extractor: Extractor) -> list[ExtractedState]:
    """States that stand in the final trace.

    A state stands when its last character was produced by the model and it
    was not retracted by feedback injected right after it. States inside
    injected text (feedback quoting an equation, say) do not count.
    """
    model_chars: list[tuple[int, int]] = []
    retracted: set[int] = set()
    pos = 0
    for seg in trace.segments:
        end = pos + len(seg.text)
        if seg.origin is Origin.MODEL:
            model_chars.append((pos, end))
        elif not seg.text.startswith(END_THINK):
            retracted.add(pos)
        pos = end
    states, _ = extractor.scan(trace.text, 0, final=True)
    return [
        s for s in states
        if s.span[1] not in retracted and any(a < s.span[1] <= b for a, b in model_chars)
    ]


def reverify_trace(trace: ReasoningTrace, bindings: Sequence[VerifierBinding]) -> list[ReverifyFailure]:
    """Re-extract and re-check every state of the stored trace with fresh verifiers.

    A state that ends exactly where feedback was injected was retracted by
    that feedback and is skipped; every other state must pass. Stoppers are
    not re-checked since they do not certify anything.
    """
    failures: list[ReverifyFailure] = []
    text = trace.text
    for b in bindings:
        if b.stopper:
            continue
        verifier = b.verifier_factory()
        states: list[ExtractedState] = []
        for start, end, retracting in _model_regions(trace):
            for ex in b.extractors:
                found, _ = ex.scan(text[:end], start, final=True)
                if retracting:
                    found = [s for s in found if s.span[1] != end]
                states.extend(found)
        states.sort(key=lambda s: (s.span[1], s.span[0]))
        for st in states:
            v = verifier.verify(st)
            if not v.passed:
                failures.append(ReverifyFailure(b.name, st.span, st.text, v.feedback))
    return failures
