"""Recover metaprompt-induced intermediate states from free-running text.

Every extractor exposes ``scan(text, start, final=False) -> (states, cursor)``.
Scans are pure: they only look at ``text`` and never mutate anything. A
state is emitted once its terminator is visible; ``final=True`` is used once
the stream has ended and lets a trailing state complete without one.

Stability extractors (answers, equations, artifact blocks) emit only the
latest complete candidate in each scan window. Structured-block extractors
(maze, spatial) emit every complete block in order.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Iterator, Protocol, Sequence

from tracewatch.geometry import Compass, DiagRelation, Direction, Pos, RelPos, TurnType


class StateKind(str, enum.Enum):
    ANSWER_PROPOSAL = "ANSWER_PROPOSAL"
    BOXED_ANSWER = "BOXED_ANSWER"
    MAZE_LOCATE = "MAZE_LOCATE"
    MAZE_STEP = "MAZE_STEP"
    MAZE_FINAL = "MAZE_FINAL"
    MAZE_RELPOS = "MAZE_RELPOS"
    SPATIAL_RELATION_SET = "SPATIAL_RELATION_SET"
    SPATIAL_CONCLUSION = "SPATIAL_CONCLUSION"
    EQUATION = "EQUATION"
    ARTIFACT_BLOCK = "ARTIFACT_BLOCK"


@dataclass(frozen=True)
class ExtractedState:
    kind: StateKind
    payload: Any
    span: tuple[int, int]
    text: str = ""
    parse_error: str | None = None

    @property
    def ok(self) -> bool:
        return self.parse_error is None


class Extractor(Protocol):
    name: str

    def scan(self, text: str, start: int, final: bool = False) -> tuple[list[ExtractedState], int]: ...


def _line_floor(text: str, start: int) -> int:
    """Offset just past the last newline at or after ``start`` (or ``start``)."""
    nl = text.rfind("\n", start)
    return nl + 1 if nl != -1 else start


def _lines(text: str, start: int, final: bool) -> Iterator[tuple[str, int, int]]:
    """Yield (line, line_start, line_end) for complete lines from ``start``.

    ``line_end`` includes the newline. With ``final`` an unterminated last
    line is yielded too.
    """
    pos = start
    n = len(text)
    while pos < n:
        nl = text.find("\n", pos)
        if nl == -1:
            if final:
                yield text[pos:], pos, n
            return
        yield text[pos:nl], pos, nl + 1
        pos = nl + 1


def _per_line(text: str, start: int, final: bool, find) -> tuple[list[ExtractedState], int]:
    """Latest-match discipline with one line as the scan window.

    Each complete line (and, with ``final``, the trailing partial line) is
    searched once; only its last candidate is emitted. Because windows are
    lines rather than whatever arrived since the previous scan, the result
    does not depend on how the stream was chunked.
    """
    states: list[ExtractedState] = []
    cursor = start
    for _line, ls, le in _lines(text, start, final):
        found = find(text[:le], ls)
        if found:
            states.append(found[-1])
        cursor = le
    return states, cursor


# ---------------------------------------------------------------------------
# answer proposals

DEFAULT_ANSWER_PHRASES: tuple[str, ...] = (
    "the answer is",
    "answer is",
    "answer:",
    "final answer is",
    "final answer:",
    "final answer",
)

_BOXED = re.compile(r"\\boxed\{(?P<body>[^{}\n]*(?:\{[^{}\n]*\}[^{}\n]*)*)\}")


def _unwrap_boxed(body: str) -> str:
    body = body.strip()
    m = re.fullmatch(r"\\text(?:bf)?\{(.*)\}", body)
    if m:
        body = m.group(1).strip()
    return body.strip("() ")


@dataclass(frozen=True)
class AnswerExtractor:
    """Detects proposals like "the answer is B" or ``\\boxed{B}``.

    ``options`` maps option labels to their literal text so that proposals
    naming the option text ("the answer is Quail's Quilts") resolve to a label.
    """

    phrases: tuple[str, ...] = DEFAULT_ANSWER_PHRASES
    options: tuple[tuple[str, str], ...] = ()
    labels: str = "ABCD"
    name: str = "answer"

    def _pattern(self) -> re.Pattern[str]:
        phrase_alt = "|".join(
            r"[ \t]+".join(re.escape(w) for w in p.split()) for p in sorted(self.phrases, key=len, reverse=True)
        )
        texts = sorted((t for _, t in self.options if t), key=len, reverse=True)
        value_alt = "|".join([re.escape(t) for t in texts] + [f"[{re.escape(self.labels)}]"])
        return re.compile(
            rf"(?i:{phrase_alt})[ \t]*:?[ \t]*(?:\*\*)?[ \t]*(?:(?i:option)[ \t]+)?\(?(?P<value>{value_alt})\)?(?:\*\*)?"
        )

    def _resolve(self, value: str) -> str | None:
        value = value.strip()
        if len(value) == 1 and value in self.labels:
            return value
        if len(value) == 3 and value[0] == "(" and value[2] == ")" and value[1] in self.labels:
            return value[1]
        for label, opt_text in self.options:
            if opt_text and value.lower() == opt_text.lower():
                return label
        return None

    def find_all(self, text: str, start: int = 0, final: bool = False) -> list[ExtractedState]:
        found: list[ExtractedState] = []
        n = len(text)
        for m in self._pattern().finditer(text, start):
            end = m.end()
            if end >= n and not final:
                continue
            if end < n and (text[end].isalnum() or text[end] == "_"):
                continue
            label = self._resolve(m.group("value"))
            if label is not None:
                found.append(ExtractedState(StateKind.ANSWER_PROPOSAL, label, (m.start(), end), m.group(0)))
        for m in _BOXED.finditer(text, start):
            label = self._resolve(_unwrap_boxed(m.group("body")))
            if label is not None:
                found.append(ExtractedState(StateKind.BOXED_ANSWER, label, m.span(), m.group(0)))
        found.sort(key=lambda s: s.span[1])
        return found

    def scan(self, text: str, start: int, final: bool = False) -> tuple[list[ExtractedState], int]:
        return _per_line(text, start, final, lambda window, ls: self.find_all(window, ls, final=True))


def extract_answer_proposal(
    text: str, cursor: int = 0, *, final: bool = True, extractor: AnswerExtractor | None = None
) -> tuple[str, int] | None:
    states, new_cursor = (extractor or AnswerExtractor()).scan(text, cursor, final=final)
    return (states[-1].payload, new_cursor) if states else None


# ---------------------------------------------------------------------------
# Game-of-24 equations

_ARITH_RUN = re.compile(r"[0-9+\-−×*/÷()= \t]+")
_OPERATOR = re.compile(r"[+\-−×*/÷]")
_TRAILING_24 = re.compile(r"=[ \t]*24[ \t]*$")


def _balance(expr: str) -> str:
    """Trim unmatched leading '(' and trailing ')' picked up from prose."""
    expr = expr.strip()
    while True:
        depth, low = 0, 0
        for ch in expr:
            depth += (ch == "(") - (ch == ")")
            low = min(low, depth)
        if low < 0 and expr.endswith(")"):
            expr = expr[:-1].rstrip()
        elif depth > 0 and expr.startswith("("):
            expr = expr[1:].lstrip()
        else:
            return expr


def _equation_candidate(run: str, inputs: Sequence[int]) -> str | None:
    body = _TRAILING_24.sub("", run.strip()).strip()
    target = sorted(inputs)
    for part in body.split("="):
        part = _balance(part)
        if not _OPERATOR.search(part):
            continue
        if sorted(int(d) for d in re.findall(r"\d+", part)) == target:
            return part
    return None


@dataclass(frozen=True)
class EquationExtractor:
    inputs: tuple[int, ...]
    name: str = "equation"

    def __post_init__(self) -> None:
        if len(self.inputs) != 4:
            raise ValueError("Game-of-24 needs exactly four inputs")

    def candidates(self, text: str, start: int) -> list[ExtractedState]:
        found = []
        for m in _ARITH_RUN.finditer(text, start):
            expr = _equation_candidate(m.group(0), self.inputs)
            if expr is not None:
                found.append(ExtractedState(StateKind.EQUATION, expr, m.span(), m.group(0)))
        return found

    def scan(self, text: str, start: int, final: bool = False) -> tuple[list[ExtractedState], int]:
        return _per_line(text, start, final, self.candidates)


def extract_equation(
    text: str, inputs: Sequence[int], cursor: int = 0, *, final: bool = True
) -> tuple[str, int] | None:
    states, new_cursor = EquationExtractor(tuple(inputs)).scan(text, cursor, final=final)
    return (states[-1].payload, new_cursor) if states else None


# ---------------------------------------------------------------------------
# maze blocks

@dataclass(frozen=True)
class RunningCounts:
    right: int
    left: int
    total: int | None = None

    def render(self) -> str:
        out = f"Right={self.right}, Left={self.left}"
        return out + (f", Total={self.total}" if self.total is not None else "")


@dataclass(frozen=True)
class MazeStepPayload:
    index: int
    move_dir: Direction
    from_pos: Pos
    to_pos: Pos
    claimed_turn: TurnType | None = None
    running_counts: RunningCounts | None = None
    current_pos: Pos | None = None
    prev_dir: Direction | None = None
    cur_dir: Direction | None = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("step index starts at 1")
        if min(self.from_pos + self.to_pos) < 0:
            raise ValueError("positions are nonnegative")

    def render(self) -> str:
        fp, tp = self.from_pos, self.to_pos
        lines = [f">>> STEP {self.index}: Move {self.move_dir.value} from ({fp[0]},{fp[1]}) to ({tp[0]},{tp[1]})"]
        if self.current_pos is not None:
            lines.append(f"  Current position: ({self.current_pos[0]},{self.current_pos[1]})")
        if self.prev_dir is not None:
            lines.append(f"  Previous direction: {self.prev_dir.value}")
        if self.cur_dir is not None:
            lines.append(f"  Current direction: {self.cur_dir.value}")
        if self.claimed_turn is not None:
            lines.append(f"  Turn type: {self.claimed_turn.value}")
        if self.running_counts is not None:
            lines.append(f"  Running count: {self.running_counts.render()}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LocatePayload:
    s_pos: Pos
    e_pos: Pos

    def render(self) -> str:
        return (
            ">>> LOCATE START AND EXIT:\n"
            f"  S position: ({self.s_pos[0]},{self.s_pos[1]})\n"
            f"  E position: ({self.e_pos[0]},{self.e_pos[1]})\n"
        )


@dataclass(frozen=True)
class MazeFinalPayload:
    measure: str  # "right" | "left" | "total"
    value: int

    def render(self) -> str:
        return f">>> FINAL ANSWER: {self.measure.capitalize()} turns = {self.value}\n"


_MARKER = re.compile(r"^[ \t]*>>>[ \t]*(?P<title>.*?)[ \t]*$")
_STEP_TITLE = re.compile(r"STEP\b", re.I)
_STEP_HEADER = re.compile(
    r"STEP\s+(?P<idx>\d+)\s*:\s*Move\s+(?P<dir>\w+)\s+from\s*\((?P<src>[^)]*)\)\s*to\s*\((?P<dst>[^)]*)\)\s*\.?$",
    re.I,
)
_LOCATE_TITLE = re.compile(r"LOCATE\b", re.I)
_FINAL_TITLE = re.compile(r"FINAL ANSWER\s*:\s*(?P<measure>Right|Left|Total) turns\s*=\s*(?P<value>\d+)\s*$", re.I)
_FIELD = re.compile(
    r"^\s*(?P<key>Current position|Previous direction|Current direction|Turn type|Running count"
    r"|S position|E position)\s*:\s*(?P<value>.*?)\s*$",
    re.I,
)
_COUNTS = re.compile(r"Right\s*=\s*(\d+)\s*,\s*Left\s*=\s*(\d+)(?:\s*,\s*Total\s*=\s*(\d+))?\s*$", re.I)
_COORD = re.compile(r"\(?\s*(\d+)\s*,\s*(\d+)\s*\)?")
_RELPOS_LINE = re.compile(
    r"^\s*(?:[-*]\s*)?Therefore,?\s+E is (?:at |to )?(?:the )?(?P<rel>top left|top right|bottom left|bottom right"
    r"|directly to the left|directly to the right|directly above|directly below)\b",
    re.I,
)
_STEP_TERMINAL = "running count"
_LOCATE_TERMINAL = "e position"


def _parse_coord(raw: str) -> Pos | None:
    m = _COORD.fullmatch(raw.strip())
    return (int(m.group(1)), int(m.group(2))) if m else None


@dataclass
class _Block:
    kind: str  # "step" | "locate"
    start: int
    header: str
    end: int
    fields: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MazeExtractor:
    """Structured maze blocks: LOCATE, STEP, FINAL ANSWER, and relative-position conclusions.

    A block is complete when its last expected line ("Running count" for a
    step, "E position" for the locate block) has been terminated, or when a
    later marker or unrelated line closes it.
    """

    name: str = "maze"

    def scan(self, text: str, start: int, final: bool = False) -> tuple[list[ExtractedState], int]:
        states: list[ExtractedState] = []
        block: _Block | None = None
        safe = start
        for line, ls, le in _lines(text, start, final):
            marker = _MARKER.match(line)
            if marker:
                if block is not None:
                    states.append(self._close(block, text))
                    block = None
                title = marker.group("title")
                if _STEP_TITLE.match(title):
                    block = _Block("step", ls, title, le)
                elif _LOCATE_TITLE.match(title):
                    block = _Block("locate", ls, title, le)
                else:
                    fin = _FINAL_TITLE.match(title)
                    if fin:
                        payload = MazeFinalPayload(fin.group("measure").lower(), int(fin.group("value")))
                        states.append(ExtractedState(StateKind.MAZE_FINAL, payload, (ls, le), text[ls:le]))
            elif block is not None:
                fm = _FIELD.match(line)
                if fm:
                    key = fm.group("key").lower()
                    block.fields[key] = fm.group("value")
                    block.end = le
                    terminal = _STEP_TERMINAL if block.kind == "step" else _LOCATE_TERMINAL
                    if key == terminal:
                        states.append(self._close(block, text))
                        block = None
                elif line.strip():
                    states.append(self._close(block, text))
                    block = None
                    self._free_line(line, ls, le, text, states)
            else:
                self._free_line(line, ls, le, text, states)
            if block is None:
                safe = le
        if block is not None:
            if final:
                states.append(self._close(block, text))
                safe = len(text)
            else:
                safe = block.start
        return states, max(safe, start)

    @staticmethod
    def _free_line(line: str, ls: int, le: int, text: str, states: list[ExtractedState]) -> None:
        m = _RELPOS_LINE.match(line)
        if m:
            rel = RelPos.parse(m.group("rel"))
            states.append(ExtractedState(StateKind.MAZE_RELPOS, rel, (ls, le), text[ls:le]))

    @staticmethod
    def _close(block: _Block, text: str) -> ExtractedState:
        span = (block.start, block.end)
        raw = text[span[0] : span[1]]
        if block.kind == "locate":
            s = _parse_coord(block.fields.get("s position", ""))
            e = _parse_coord(block.fields.get("e position", ""))
            if s is None or e is None:
                return ExtractedState(StateKind.MAZE_LOCATE, None, span, raw, "could not read S and E positions")
            return ExtractedState(StateKind.MAZE_LOCATE, LocatePayload(s, e), span, raw)
        try:
            return ExtractedState(StateKind.MAZE_STEP, _parse_step(block), span, raw)
        except ValueError as exc:
            return ExtractedState(StateKind.MAZE_STEP, None, span, raw, str(exc))


def _parse_step(block: _Block) -> MazeStepPayload:
    head = _STEP_HEADER.match(block.header)
    if not head:
        raise ValueError(f"step header not in the form 'STEP n: Move DIR from (r,c) to (r,c)': {block.header!r}")
    move = Direction.parse(head.group("dir"))
    if move is None:
        raise ValueError(f"unknown direction {head.group('dir')!r}")
    src, dst = _parse_coord(head.group("src")), _parse_coord(head.group("dst"))
    if src is None or dst is None:
        raise ValueError(f"malformed coordinates in {block.header!r}")
    f = block.fields
    kwargs: dict[str, Any] = {}
    if "current position" in f:
        kwargs["current_pos"] = _parse_coord(f["current position"])
        if kwargs["current_pos"] is None:
            raise ValueError(f"malformed current position {f['current position']!r}")
    if f.get("previous direction", "").strip():
        kwargs["prev_dir"] = Direction.parse(f["previous direction"])
        if kwargs["prev_dir"] is None:
            raise ValueError(f"unknown previous direction {f['previous direction']!r}")
    if "current direction" in f:
        kwargs["cur_dir"] = Direction.parse(f["current direction"])
        if kwargs["cur_dir"] is None:
            raise ValueError(f"unknown current direction {f['current direction']!r}")
    if "turn type" in f:
        kwargs["claimed_turn"] = TurnType.parse(f["turn type"])
        if kwargs["claimed_turn"] is None:
            raise ValueError(f"unknown turn type {f['turn type']!r}")
    if "running count" in f:
        cm = _COUNTS.match(f["running count"])
        if not cm:
            raise ValueError(f"malformed running count {f['running count']!r}")
        total = int(cm.group(3)) if cm.group(3) is not None else None
        kwargs["running_counts"] = RunningCounts(int(cm.group(1)), int(cm.group(2)), total)
    return MazeStepPayload(int(head.group("idx")), move, src, dst, **kwargs)


def _first_state(extractor: Extractor, text: str, cursor: int, kind: StateKind) -> tuple[Any, int] | None:
    states, _ = extractor.scan(text, cursor, final=True)
    for st in states:
        if st.kind is kind:
            return st.payload, st.span[1]
    return None


def extract_maze_step(text: str, cursor: int = 0) -> tuple[MazeStepPayload | None, int] | None:
    return _first_state(MazeExtractor(), text, cursor, StateKind.MAZE_STEP)


def extract_maze_locate(text: str, cursor: int = 0) -> tuple[LocatePayload | None, int] | None:
    return _first_state(MazeExtractor(), text, cursor, StateKind.MAZE_LOCATE)


# ---------------------------------------------------------------------------
# spatial maps

_SP_STEP1 = re.compile(r"STEP\s*1\s*:\s*PARSE\s+RELATIONSHIPS", re.I)
_SP_CONCLUDE = re.compile(r"STEP\s*[23]\b", re.I)
_BULLET = re.compile(r"^\s*[-*•]\s*(?P<body>.*?)\s*$")
_REL_BODY = re.compile(
    r"^[\"'“]?(?P<s>.+?) is (?:to |in )?(?:the )?(?P<d>[A-Za-z][A-Za-z-]*) of (?P<o>.+?)[\"'”]?\s*[.]?$"
)
_NAME = r"[A-Z][\w'’&-]*(?: [A-Z][\w'’&-]*)*"
_CONCLUSION = re.compile(
    rf"^\s*(?:[-*]\s*)?(?:(?:Therefore|So|Thus|Hence),?\s+)?(?P<s>{_NAME}) is (?:to |in )?(?:the )?"
    rf"(?P<d>[A-Za-z][A-Za-z-]*) of (?P<o>{_NAME})\s*[.!]?\s*$"
)


def parse_relation_line(body: str) -> tuple[DiagRelation | None, str | None]:
    m = _REL_BODY.match(body.strip())
    if not m:
        return None, f"not a relation: {body!r}"
    d = Compass.parse(m.group("d"))
    s, o = m.group("s").strip(), m.group("o").strip()
    if d is None:
        return None, f"unknown direction {m.group('d')!r} in {body!r}"
    return DiagRelation(s, d, o), None


@dataclass(frozen=True)
class SpatialExtractor:
    """STEP 1 relation lists and STEP 2/3 conclusions of the map metaprompt."""

    name: str = "spatial"

    def scan(self, text: str, start: int, final: bool = False) -> tuple[list[ExtractedState], int]:
        states: list[ExtractedState] = []
        region = self._region_before(text, start)
        rel_block: dict[str, Any] | None = None
        safe = start

        def close() -> None:
            states.append(self._relation_set(rel_block, text))

        for line, ls, le in _lines(text, start, final):
            marker = _MARKER.match(line)
            if marker:
                if rel_block is not None:
                    close()
                    rel_block = None
                title = marker.group("title")
                if _SP_STEP1.match(title):
                    rel_block = {"start": ls, "end": le, "lines": []}
                    region = "parse"
                elif _SP_CONCLUDE.match(title):
                    region = "conclude"
                else:
                    region = "other"
            elif rel_block is not None:
                bullet = _BULLET.match(line)
                if bullet and bullet.group("body"):
                    rel_block["lines"].append(bullet.group("body"))
                    rel_block["end"] = le
                elif line.strip():
                    close()
                    rel_block = None
                    region = "other"
            elif region == "conclude":
                m = _CONCLUSION.match(line)
                if m:
                    d = Compass.parse(m.group("d"))
                    rel = DiagRelation(m.group("s"), d, m.group("o")) if d else None
                    err = None if d else f"unknown direction {m.group('d')!r}"
                    states.append(ExtractedState(StateKind.SPATIAL_CONCLUSION, rel, (ls, le), text[ls:le], err))
            if rel_block is None:
                safe = le
        if rel_block is not None:
            if final:
                close()
                safe = len(text)
            else:
                safe = rel_block["start"]
        return states, max(safe, start)

    @staticmethod
    def _region_before(text: str, start: int) -> str:
        region = "other"
        for m in re.finditer(r"^[ \t]*>>>[ \t]*(?P<title>.*)$", text[:start], re.M):
            title = m.group("title")
            region = "parse" if _SP_STEP1.match(title) else "conclude" if _SP_CONCLUDE.match(title) else "other"
        return "other" if region == "parse" else region

    @staticmethod
    def _relation_set(block: dict[str, Any], text: str) -> ExtractedState:
        rels, errors = [], []
        for body in block["lines"]:
            rel, err = parse_relation_line(body)
            if err:
                errors.append(err)
            elif not rel.dir.is_diagonal:
                errors.append(f"only diagonal directions may be listed, got {rel.render()!r}")
            else:
                rels.append(rel)
        span = (block["start"], block["end"])
        return ExtractedState(
            StateKind.SPATIAL_RELATION_SET, tuple(rels), span, text[span[0] : span[1]], "; ".join(errors) or None
        )


def render_relation_set(relations: Sequence[DiagRelation]) -> str:
    return ">>> STEP 1: PARSE RELATIONSHIPS\n" + "".join(f"- {r.render()}\n" for r in relations)


def extract_spatial_states(text: str, cursor: int = 0, *, final: bool = True) -> list[ExtractedState]:
    return SpatialExtractor().scan(text, cursor, final=final)[0]


# ---------------------------------------------------------------------------
# artifact blocks (code / specifications)

DEFAULT_CODE_PHRASES: tuple[str, ...] = ("the code is", "here is the code", "final code", "the implementation is")
DEFAULT_PRE_PHRASES: tuple[str, ...] = ("the precondition is", "the pre-condition is", "precondition:")
DEFAULT_POST_PHRASES: tuple[str, ...] = ("the postcondition is", "the post-condition is", "postcondition:")


@dataclass(frozen=True)
class ArtifactPayload:
    family: str
    body: str


@dataclass(frozen=True)
class ArtifactExtractor:
    """Fenced or indented block following a trigger phrase of one family."""

    phrases: tuple[str, ...] = DEFAULT_CODE_PHRASES
    family: str = "code"
    name: str = "artifact"

    def __post_init__(self) -> None:
        if not self.phrases:
            raise ValueError("phrase family must be non-empty")

    def _trigger(self) -> re.Pattern[str]:
        alt = "|".join(re.escape(p) for p in sorted(self.phrases, key=len, reverse=True))
        return re.compile(alt, re.I)

    def _block_after(self, text: str, pos: int, final: bool) -> tuple[str, tuple[int, int] | None, str | None]:
        """Return (status, span, body) for the block after a trigger ending at ``pos``.

        status is "complete", "pending" (may still appear) or "absent".
        """
        nl = text.find("\n", pos)
        if nl == -1:
            return ("absent", None, None) if final else ("pending", None, None)
        cur = nl + 1
        # skip blank lines
        while True:
            nxt = text.find("\n", cur)
            if nxt == -1:
                line = text[cur:]
                if not final or not line.strip():
                    return ("absent", None, None) if final else ("pending", None, None)
                break
            if text[cur:nxt].strip():
                break
            cur = nxt + 1
        line_end = text.find("\n", cur)
        first = text[cur:] if line_end == -1 else text[cur:line_end]
        if first.lstrip().startswith("```"):
            if line_end == -1:
                return ("absent", None, None) if final else ("pending", None, None)
            fence = re.compile(r"^[ \t]*```[ \t]*$", re.M)
            close = fence.search(text, line_end + 1)
            # an unterminated closing line could still grow, so wait for its newline
            if close is None or (close.end() >= len(text) and not final):
                return ("absent", None, None) if final else ("pending", None, None)
            body = text[line_end + 1 : close.start()]
            end = close.end() + (1 if text[close.end() : close.end() + 1] == "\n" else 0)
            return "complete", (cur, end), body.rstrip("\n")
        if first.startswith(("    ", "\t")):
            body_lines, end = [], cur
            for line, _ls, le in _lines(text, cur, final):
                if line.startswith(("    ", "\t")) or not line.strip():
                    body_lines.append(line)
                    if line.strip():
                        end = le
                    continue
                return "complete", (cur, end), "\n".join(body_lines).rstrip("\n")
            if final and body_lines:
                return "complete", (cur, end), "\n".join(body_lines).rstrip("\n")
            return "pending", None, None
        if line_end == -1 and not final:
            return "pending", None, None
        return "absent", None, None

    def scan(self, text: str, start: int, final: bool = False) -> tuple[list[ExtractedState], int]:
        """Every block completed since ``start``, in order.

        Blocks finish on distinct lines, so with line-sized windows each block
        is the latest (and only) candidate of the window that completes it.
        """
        found: list[ExtractedState] = []
        pending_at: int | None = None
        skip_until = start
        for m in self._trigger().finditer(text, start):
            if m.start() < skip_until:
                continue
            status, span, body = self._block_after(text, m.end(), final)
            if status == "complete":
                full = (m.start(), span[1])
                payload = ArtifactPayload(self.family, body)
                found.append(ExtractedState(StateKind.ARTIFACT_BLOCK, payload, full, text[full[0] : full[1]]))
                skip_until = span[1]
            elif status == "pending":
                pending_at = m.start()
                break
        if pending_at is not None:
            cursor = pending_at
        elif final:
            cursor = len(text)
        else:
            cursor = max(skip_until, _line_floor(text, start))
        return found, max(cursor, start)


def extract_artifact_block(
    text: str, cursor: int = 0, phrase_family: Sequence[str] = DEFAULT_CODE_PHRASES, *, final: bool = True
) -> tuple[str, int] | None:
    states, new_cursor = ArtifactExtractor(tuple(phrase_family)).scan(text, cursor, final=final)
    return (states[-1].payload.body, new_cursor) if states else None
