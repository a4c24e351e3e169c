"""The single evolving output trace and the in-place edits applied to it."""

from __future__ import annotations

import bisect
import copy
import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from tracewatch.extraction import Extractor, ExtractedState

END_THINK = "</think>"
DEFAULT_FEEDBACK_PREFIX = "Wait, "
DEFAULT_ANSWER_PROMPT = "\nThe final answer is"


class ContractViolation(RuntimeError):
    """An operation was called outside its precondition."""


class Origin(str, enum.Enum):
    MODEL = "MODEL"
    INTERVENTION = "INTERVENTION"


@dataclass
class Segment:
    text: str
    origin: Origin
    token_count: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "origin": self.origin.value, "token_count": self.token_count}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Segment:
        return cls(data["text"], Origin(data["origin"]), int(data.get("token_count", 0)))


@dataclass(frozen=True)
class Verdict:
    """Outcome of checking one extracted state.

    ``passed`` has the verifier's own meaning: for external verifiers it is
    "the state is valid", for stability monitors it is "the stop criterion
    is met". The binding policy turns it into an action.
    """

    passed: bool
    feedback: str | None = None
    state_span: tuple[int, int] | None = None

    def with_span(self, span: tuple[int, int]) -> Verdict:
        return Verdict(self.passed, self.feedback, span)


class ActionKind(str, enum.Enum):
    CONTINUE = "CONTINUE"
    INJECT_TEXT = "INJECT_TEXT"
    INJECT_END_THINK = "INJECT_END_THINK"
    HALT = "HALT"


class InsertAt(str, enum.Enum):
    AFTER_STATE = "AFTER_STATE"
    AT_TAIL = "AT_TAIL"


@dataclass(frozen=True)
class InterventionAction:
    kind: ActionKind
    payload: str | None = None
    insert_at: InsertAt = InsertAt.AFTER_STATE

    def __post_init__(self) -> None:
        if (self.kind is ActionKind.INJECT_TEXT) != (self.payload is not None):
            raise ValueError("payload is required for INJECT_TEXT and forbidden otherwise")

    @classmethod
    def cont(cls) -> InterventionAction:
        return cls(ActionKind.CONTINUE)


CONTINUE = InterventionAction(ActionKind.CONTINUE)


@dataclass
class ReasoningTrace:
    """Prompt plus ordered MODEL / INTERVENTION segments.

    Offsets (cursors, spans) index into :attr:`text`, the concatenation of all
    segments; the prompt is not part of it. Injected text is never scanned
    for states because every injection moves all cursors past itself.
    """

    prompt: str
    segments: list[Segment] = field(default_factory=list)
    cursors: dict[str, int] = field(default_factory=dict)
    think_closed: bool = False
    frozen: bool = False
    discarded_tokens: int = 0
    _text: str = field(default="", repr=False)
    _token_starts: list[int] = field(default_factory=list, repr=False)

    # -- views -------------------------------------------------------------
    @property
    def text(self) -> str:
        return self._text

    @property
    def model_text(self) -> str:
        return "".join(s.text for s in self.segments if s.origin is Origin.MODEL)

    @property
    def reasoning_tokens(self) -> int:
        return sum(s.token_count for s in self.segments if s.origin is Origin.MODEL)

    @property
    def injected_tokens(self) -> int:
        return sum(s.token_count for s in self.segments if s.origin is Origin.INTERVENTION)

    @property
    def cursor(self) -> int:
        return min(self.cursors.values()) if self.cursors else 0

    def __len__(self) -> int:
        return len(self._text)

    def interventions(self) -> list[tuple[int, Segment]]:
        """(start offset, segment) for every injected segment."""
        out, pos = [], 0
        for seg in self.segments:
            if seg.origin is Origin.INTERVENTION:
                out.append((pos, seg))
            pos += len(seg.text)
        return out

    # -- mutation ----------------------------------------------------------
    def _check_open(self) -> None:
        if self.frozen:
            raise ContractViolation("trace is frozen")

    def append_model(self, fragment: str) -> None:
        """Append one backend token event."""
        self._check_open()
        self._token_starts.append(len(self._text))
        if self.segments and self.segments[-1].origin is Origin.MODEL:
            seg = self.segments[-1]
            seg.text += fragment
            seg.token_count += 1
        else:
            self.segments.append(Segment(fragment, Origin.MODEL, 1))
        self._text += fragment

    def append_intervention(self, text: str, token_count: int) -> None:
        self._check_open()
        self.segments.append(Segment(text, Origin.INTERVENTION, token_count))
        self._text += text
        for key in self.cursors:
            self.cursors[key] = len(self._text)

    def truncate(self, offset: int) -> None:
        """Drop everything after ``offset``; only trailing model text may be cut."""
        self._check_open()
        if offset >= len(self._text):
            return
        if offset < 0:
            raise ContractViolation("negative truncation offset")
        pos = 0
        for i, seg in enumerate(self.segments):
            end = pos + len(seg.text)
            if end > offset:
                if any(s.origin is Origin.INTERVENTION for s in self.segments[i:]):
                    raise ContractViolation("truncation would remove injected text")
                break
            pos = end
        keep = bisect.bisect_left(self._token_starts, offset)
        self.discarded_tokens += len(self._token_starts) - keep
        del self._token_starts[keep:]
        # rebuild segments up to offset
        pos, kept = 0, []
        for seg in self.segments:
            end = pos + len(seg.text)
            if end <= offset:
                kept.append(seg)
            elif pos < offset:
                kept.append(Segment(seg.text[: offset - pos], seg.origin, 0))
            pos = end
        self.segments = kept
        self._text = self._text[:offset]
        self._recount_model_tokens()
        for key, cur in self.cursors.items():
            self.cursors[key] = min(cur, offset)

    def _recount_model_tokens(self) -> None:
        pos, starts = 0, self._token_starts
        for seg in self.segments:
            end = pos + len(seg.text)
            if seg.origin is Origin.MODEL:
                seg.token_count = bisect.bisect_left(starts, end) - bisect.bisect_left(starts, pos)
            pos = end

    def prefix(self, offset: int) -> ReasoningTrace:
        """Independent copy of the trace cut at ``offset``."""
        clone = copy.deepcopy(self)
        clone.frozen = False
        clone.truncate(offset)
        return clone

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "segments": [s.to_dict() for s in self.segments],
            "think_closed": self.think_closed,
            "discarded_tokens": self.discarded_tokens,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ReasoningTrace:
        trace = cls(prompt=data["prompt"])
        for raw in data.get("segments", []):
            seg = Segment.from_dict(raw)
            trace.segments.append(seg)
            trace._text += seg.text
        trace.think_closed = bool(data.get("think_closed", False))
        trace.discarded_tokens = int(data.get("discarded_tokens", 0))
        return trace


def apply_intervention(
    trace: ReasoningTrace,
    action: InterventionAction,
    span: tuple[int, int] | None = None,
    *,
    feedback_prefix: str = DEFAULT_FEEDBACK_PREFIX,
    answer_prompt: str = DEFAULT_ANSWER_PROMPT,
    token_counter=None,
) -> ReasoningTrace:
    """Apply ``action`` to ``trace`` in place and return it.

    With ``AFTER_STATE`` placement, model text streamed past ``span`` is
    discarded before anything is injected, since it was conditioned on the
    state being acted upon.
    """
    if action.kind is ActionKind.CONTINUE:
        return trace
    if span is not None and not (0 <= span[0] <= span[1] <= len(trace)):
        raise ContractViolation(f"span {span} outside generated text (length {len(trace)})")
    if action.kind is ActionKind.HALT:
        # cut like any other intervention so the kept text does not depend on chunking
        if action.insert_at is InsertAt.AFTER_STATE and span is not None:
            trace.truncate(span[1])
        trace.frozen = True
        return trace
    if action.kind is ActionKind.INJECT_END_THINK and trace.think_closed:
        raise ContractViolation("think region already closed")
    if token_counter is None:
        from tracewatch.backends.mock import tokenize

        token_counter = lambda s: len(tokenize(s))  # noqa: E731
    if action.insert_at is InsertAt.AFTER_STATE and span is not None:
        trace.truncate(span[1])
    if action.kind is ActionKind.INJECT_TEXT:
        text = feedback_prefix + action.payload
        trace.append_intervention(text, token_counter(text))
    else:
        text = END_THINK + answer_prompt
        trace.append_intervention(text, token_counter(text))
        trace.think_closed = True
    return trace


def scan_for_states(
    trace: ReasoningTrace,
    extractor: Extractor,
    *,
    key: str | None = None,
    final: bool = False,
) -> list[ExtractedState]:
    """Return complete states at or after the extractor's cursor and advance it.

    A partially streamed state is withheld and the cursor stays before it,
    so it is returned by a later scan once its terminator arrives.
    """
    key = key or extractor.name
    start = trace.cursors.get(key, 0)
    states, new_cursor = extractor.scan(trace.text, start, final=final)
    trace.cursors[key] = max(start, new_cursor)
    return states
