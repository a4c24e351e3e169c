"""Tree-of-Thoughts adapters for the three task kinds.

A path is a list of step strings. Proposals are parsed from the proposer's
reply; the step verifier replays the whole path against the task verifier.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from tracewatch.backends import ConfigurationError
from tracewatch.extraction import MazeExtractor, SpatialExtractor, StateKind
from tracewatch.geometry import Compass, DiagRelation
from tracewatch.taskgen import TaskInstance, TaskKind, maze_grid_of, spatial_store_of
from tracewatch.tasks import NO_ANSWER
from tracewatch.verifiers.maze import MazeStepVerifier, QuestionKind, count_turns, relative_position
from tracewatch.verifiers.spatial import verify_conclusion

VALUE_SUFFIX = "Answer with one word: likely, unlikely or impossible."

# ---------------------------------------------------------------------------
# Game of 24

_G24_STEP = re.compile(r"(\d+(?:/\d+)?)\s*([+\-*/])\s*(\d+(?:/\d+)?)\s*=\s*(-?\d+(?:/\d+)?)")


def _apply(op: str, a: Fraction, b: Fraction) -> Fraction | None:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a / b if b != 0 else None


def _fmt(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


@dataclass
class Game24ToT:
    """Steps combine two remaining numbers, e.g. ``"4 * 6 = 24"``."""

    numbers: tuple[int, ...]

    def _replay(self, path: Sequence[str]) -> tuple[list[tuple[Fraction, str]], bool]:
        pool = [(Fraction(n), str(n)) for n in self.numbers]
        for step in path:
            m = _G24_STEP.fullmatch(step.strip())
            if not m:
                return pool, False
            a, op, b, c = Fraction(m.group(1)), m.group(2), Fraction(m.group(3)), Fraction(m.group(4))
            ia = next((i for i, (v, _) in enumerate(pool) if v == a), None)
            if ia is None:
                return pool, False
            ea = pool.pop(ia)[1]
            ib = next((i for i, (v, _) in enumerate(pool) if v == b), None)
            if ib is None:
                return pool, False
            eb = pool.pop(ib)[1]
            if _apply(op, a, b) != c:
                return pool, False
            pool.append((c, f"({ea} {op} {eb})"))
        return pool, True

    def remaining(self, path: Sequence[str]) -> list[str]:
        return [_fmt(v) for v, _ in self._replay(path)[0]]

    def propose_prompt(self, path: Sequence[str]) -> str:
        return (
            "Combine two of the numbers with +, -, * or / and list each option on its own line "
            "as 'a op b = c'.\nExample for 2 8 8 14: 8 + 14 = 22\n"
            f"Numbers: {' '.join(self.remaining(path))}\nOptions:"
        )

    def parse_proposals(self, text: str) -> list[str]:
        return [m.group(0) for m in _G24_STEP.finditer(text)]

    def value_prompt(self, path: Sequence[str]) -> str:
        return f"Can the numbers {' '.join(self.remaining(path))} still reach exactly 24? {VALUE_SUFFIX}"

    def step_verify(self, path: Sequence[str]) -> bool:
        pool, ok = self._replay(path)
        if not ok:
            return False
        return len(pool) > 1 or pool[0][0] == 24

    def is_terminal(self, path: Sequence[str]) -> bool:
        return len(self._replay(path)[0]) == 1

    def answer(self, path: Sequence[str]) -> str:
        pool, ok = self._replay(path)
        if not ok or len(pool) != 1:
            return NO_ANSWER
        return pool[0][1][1:-1] if pool[0][1].startswith("(") else pool[0][1]


# ---------------------------------------------------------------------------
# maze

@dataclass
class MazeToT:
    """Steps are ``>>> STEP`` blocks; a path is terminal once it reaches E."""

    instance: TaskInstance

    def __post_init__(self) -> None:
        self.grid = maze_grid_of(self.instance)

    def _steps(self, path: Sequence[str]):
        states, _ = MazeExtractor().scan("".join(path), 0, final=True)
        return [s for s in states if s.kind is StateKind.MAZE_STEP]

    def propose_prompt(self, path: Sequence[str]) -> str:
        return (
            f"Maze:\n{self.instance.payload['ascii']}\n\nSteps so far:\n{''.join(path) or '(none)'}\n"
            "Write the next '>>> STEP' block."
        )

    def parse_proposals(self, text: str) -> list[str]:
        return [s.text if s.text.endswith("\n") else s.text + "\n" for s in self._steps([text])]

    def value_prompt(self, path: Sequence[str]) -> str:
        return f"{self.propose_prompt(path)}\nAre these steps on track to reach E? {VALUE_SUFFIX}"

    def step_verify(self, path: Sequence[str]) -> bool:
        verifier = MazeStepVerifier(self.grid)
        steps = self._steps(path)
        return len(steps) == len(path) and all(verifier.verify(s).passed for s in steps)

    def is_terminal(self, path: Sequence[str]) -> bool:
        steps = self._steps(path)
        return bool(steps) and steps[-1].ok and steps[-1].payload.to_pos == self.grid.end

    def answer(self, path: Sequence[str]) -> str:
        steps = [s.payload for s in self._steps(path) if s.ok]
        if not steps:
            return NO_ANSWER
        qk = QuestionKind(self.instance.question_kind)
        if qk is QuestionKind.RELATIVE_POSITION:
            value = relative_position(steps[0].from_pos, steps[-1].to_pos).value
        else:
            right, left = count_turns([s.move_dir for s in steps])
            value = str(right if qk is QuestionKind.RIGHT_TURNS else right + left)
        return next((lbl for lbl, txt in self.instance.options if txt == value), NO_ANSWER)


# ---------------------------------------------------------------------------
# spatial maps (direction questions)

@dataclass
class SpatialToT:
    """Steps are conclusion lines; terminal once the queried pair is concluded."""

    instance: TaskInstance

    def __post_init__(self) -> None:
        if self.instance.question_kind != "Q0":
            raise ConfigurationError("tree search on maps supports direction questions (Q0) only")
        self.store = spatial_store_of(self.instance)
        self.x, self.y = self.instance.payload["query"]

    def _claims(self, path: Sequence[str]) -> list[DiagRelation | None]:
        text = ">>> STEP 2: CONCLUDE\n" + "".join(p if p.endswith("\n") else p + "\n" for p in path)
        states, _ = SpatialExtractor().scan(text, 0, final=True)
        return [s.payload for s in states if s.kind is StateKind.SPATIAL_CONCLUSION]

    def propose_prompt(self, path: Sequence[str]) -> str:
        return (
            f"Map: {self.instance.payload['description']}\nQuestion: {self.instance.question}\n"
            f"Conclusions so far:\n{''.join(path) or '(none)'}\n"
            "Write possible next conclusions, one per line, as '<Place> is to the <Direction> of <Place>.'"
        )

    def parse_proposals(self, text: str) -> list[str]:
        states, _ = SpatialExtractor().scan(">>> STEP 2: CONCLUDE\n" + text, 0, final=True)
        return [s.text.strip() + "\n" for s in states if s.kind is StateKind.SPATIAL_CONCLUSION and s.ok]

    def value_prompt(self, path: Sequence[str]) -> str:
        return f"{self.propose_prompt(path)}\nDo these conclusions follow from the map? {VALUE_SUFFIX}"

    def step_verify(self, path: Sequence[str]) -> bool:
        claims = self._claims(path)
        return len(claims) == len(path) and all(c is not None and verify_conclusion(self.store, c).passed for c in claims)

    def _final(self, path: Sequence[str]) -> Compass | None:
        claims = self._claims(path)
        last = claims[-1] if claims else None
        if last is not None and (last.subject, last.object) == (self.x, self.y):
            return last.dir
        return None

    def is_terminal(self, path: Sequence[str]) -> bool:
        return self._final(path) is not None

    def answer(self, path: Sequence[str]) -> str:
        d = self._final(path)
        if d is None:
            return NO_ANSWER
        return next((lbl for lbl, txt in self.instance.options if txt == d.value), NO_ANSWER)


def tot_task_for(instance: TaskInstance):
    if instance.kind is TaskKind.GAME24:
        return Game24ToT(tuple(instance.payload["numbers"]))
    if instance.kind is TaskKind.MAZE:
        return MazeToT(instance)
    return SpatialToT(instance)
