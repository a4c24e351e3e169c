"""ASCII maze parsing, move simulation, turn classification and step checks.

Alphabet: ``#`` wall, space open, ``S`` start, ``E`` end, ``*`` path cell.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from tracewatch.extraction import (
    ExtractedState,
    LocatePayload,
    MazeFinalPayload,
    MazeStepPayload,
    RunningCounts,
    StateKind,
)
from tracewatch.geometry import Direction, Pos, RelPos, TurnType
from tracewatch.trace import Verdict

WALL, OPEN, START, END, PATH = "#", " ", "S", "E", "*"
_ALPHABET = {WALL, OPEN, START, END, PATH}


class MazeError(ValueError):
    """Malformed maze text."""


class MoveViolation(ValueError):
    def __init__(self, feedback: str, target: Pos) -> None:
        super().__init__(feedback)
        self.feedback = feedback
        self.target = target


class QuestionKind(str, enum.Enum):
    RIGHT_TURNS = "right_turns"
    TOTAL_TURNS = "total_turns"
    RELATIVE_POSITION = "relative_position"


@dataclass(frozen=True)
class MazeGrid:
    height: int
    width: int
    walls: frozenset[Pos]
    start: Pos
    end: Pos
    path: tuple[Pos, ...] | None = None

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise MazeError("maze must have positive dimensions")
        if self.start == self.end:
            raise MazeError("start and end coincide")
        if self.start in self.walls or self.end in self.walls:
            raise MazeError("start or end lies on a wall")
        if self.path is not None:
            p = self.path
            if p[0] != self.start or p[-1] != self.end:
                raise MazeError("path must run from start to end")
            for a, b in zip(p, p[1:]):
                if Direction.between(a, b) is None:
                    raise MazeError(f"path is not 4-connected between {a} and {b}")
            if any(c in self.walls for c in p):
                raise MazeError("path crosses a wall")

    def in_bounds(self, pos: Pos) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    def is_open(self, pos: Pos) -> bool:
        return self.in_bounds(pos) and pos not in self.walls

    def moves(self) -> list[Direction]:
        if not self.path:
            return []
        return [Direction.between(a, b) for a, b in zip(self.path, self.path[1:])]


def parse_maze(ascii_text: str) -> MazeGrid:
    rows = ascii_text.split("\n")
    while rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise MazeError("empty maze")
    width = len(rows[0])
    walls: set[Pos] = set()
    starts, ends, marked = [], [], set()
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MazeError(f"row {r} has length {len(row)}, expected {width} (ragged rows)")
        for c, ch in enumerate(row):
            if ch not in _ALPHABET:
                raise MazeError(f"unknown symbol {ch!r} at row {r}, col {c}")
            if ch == WALL:
                walls.add((r, c))
            elif ch == START:
                starts.append((r, c))
            elif ch == END:
                ends.append((r, c))
            elif ch == PATH:
                marked.add((r, c))
    for name, found in (("S", starts), ("E", ends)):
        if len(found) != 1:
            where = ", ".join(f"(row {r}, col {c})" for r, c in found) or "none"
            raise MazeError(f"expected exactly one {name}, found {len(found)}: {where}")
    start, end = starts[0], ends[0]
    path = _walk_path(start, end, marked)
    return MazeGrid(len(rows), width, frozenset(walls), start, end, path)


def _walk_path(start: Pos, end: Pos, marked: set[Pos]) -> tuple[Pos, ...] | None:
    if not marked:
        return (start, end) if Direction.between(start, end) else None
    cells = marked | {end}
    path, prev, cur = [start], None, start
    while cur != end:
        nbrs = [
            (cur[0] + d.delta[0], cur[1] + d.delta[1])
            for d in Direction
            if (cur[0] + d.delta[0], cur[1] + d.delta[1]) in cells and (cur[0] + d.delta[0], cur[1] + d.delta[1]) != prev
        ]
        nbrs = [n for n in nbrs if n not in path]
        if len(nbrs) != 1:
            kind = "disconnected" if not nbrs else "ambiguous"
            raise MazeError(f"path is {kind} at row {cur[0]}, col {cur[1]}")
        prev, cur = cur, nbrs[0]
        path.append(cur)
    if len(path) - 2 != len(marked):
        stray = sorted(marked - set(path))
        raise MazeError(f"path cell at row {stray[0][0]}, col {stray[0][1]} is disconnected from the route")
    return tuple(path)


def render_maze(grid: MazeGrid, *, show_path: bool = True) -> str:
    cells = [[OPEN] * grid.width for _ in range(grid.height)]
    for r, c in grid.walls:
        cells[r][c] = WALL
    if show_path and grid.path:
        for r, c in grid.path[1:-1]:
            cells[r][c] = PATH
    cells[grid.start[0]][grid.start[1]] = START
    cells[grid.end[0]][grid.end[1]] = END
    return "\n".join("".join(row) for row in cells)


def classify_turn(prev: Direction | None, cur: Direction) -> TurnType:
    """Screen-coordinate turn rule: DOWN->LEFT is a right (clockwise) turn."""
    if prev is None or prev is cur:
        return TurnType.STRAIGHT
    if prev.cw() is cur:
        return TurnType.RIGHT_TURN
    if prev.ccw() is cur:
        return TurnType.LEFT_TURN
    return TurnType.REVERSAL


def simulate_move(grid: MazeGrid, pos: Pos, direction: Direction) -> Pos:
    dr, dc = direction.delta
    target = (pos[0] + dr, pos[1] + dc)
    if not grid.in_bounds(target):
        raise MoveViolation(
            f"moving {direction.value} from ({pos[0]},{pos[1]}) leaves the grid at ({target[0]},{target[1]})", target
        )
    if target in grid.walls:
        raise MoveViolation(
            f"moving {direction.value} from ({pos[0]},{pos[1]}) means entering a wall cell at ({target[0]},{target[1]})",
            target,
        )
    return target


def relative_position(s: Pos, e: Pos) -> RelPos:
    """Where ``e`` lies as seen from ``s``."""
    if s == e:
        raise ValueError("relative position of a cell to itself is undefined")
    dr, dc = e[0] - s[0], e[1] - s[1]
    if dr == 0:
        return RelPos.DIRECTLY_LEFT if dc < 0 else RelPos.DIRECTLY_RIGHT
    if dc == 0:
        return RelPos.DIRECTLY_ABOVE if dr < 0 else RelPos.DIRECTLY_BELOW
    if dr < 0:
        return RelPos.TOP_LEFT if dc < 0 else RelPos.TOP_RIGHT
    return RelPos.BOTTOM_LEFT if dc < 0 else RelPos.BOTTOM_RIGHT


def count_turns(moves: list[Direction]) -> tuple[int, int]:
    """(right, left) turn counts along a move sequence; reversals count as neither."""
    right = left = 0
    for prev, cur in zip(moves, moves[1:]):
        t = classify_turn(prev, cur)
        right += t is TurnType.RIGHT_TURN
        left += t is TurnType.LEFT_TURN
    return right, left


def maze_oracle(grid: MazeGrid, question_kind: QuestionKind | str) -> int | RelPos:
    kind = QuestionKind(question_kind)
    if kind is QuestionKind.RELATIVE_POSITION:
        return relative_position(grid.start, grid.end)
    if grid.path is None:
        raise ValueError("turn questions need a path")
    right, left = count_turns(grid.moves())
    return right if kind is QuestionKind.RIGHT_TURNS else right + left


# ---------------------------------------------------------------------------
# step verification

def _fmt(p: Pos) -> str:
    return f"({p[0]},{p[1]})"


def _resume_hint(grid: MazeGrid, history: list[MazeStepPayload]) -> str:
    if not history:
        return f"Resume from the last valid state: at S {_fmt(grid.start)}, no moves yet, Right=0, Left=0."
    last = history[-1]
    right, left = count_turns([h.move_dir for h in history])
    return (
        f"Resume from the last valid state: STEP {last.index} ended at {_fmt(last.to_pos)} facing "
        f"{last.move_dir.value}, Right={right}, Left={left}."
    )


def expected_step(grid: MazeGrid, history: list[MazeStepPayload], move: Direction) -> MazeStepPayload:
    """The fully specified step taking ``move`` after ``history`` (raises MoveViolation)."""
    src = history[-1].to_pos if history else grid.start
    dst = simulate_move(grid, src, move)
    prev = history[-1].move_dir if history else None
    right, left = count_turns([h.move_dir for h in history] + [move])
    return MazeStepPayload(
        index=len(history) + 1,
        move_dir=move,
        from_pos=src,
        to_pos=dst,
        claimed_turn=classify_turn(prev, move),
        running_counts=RunningCounts(right, left, right + left),
        current_pos=dst,
        prev_dir=prev,
        cur_dir=move,
    )


def verify_step(grid: MazeGrid, history: list[MazeStepPayload], step: MazeStepPayload) -> Verdict:
    def fail(msg: str) -> Verdict:
        return Verdict(False, f"STEP {step.index} is wrong: {msg}. {_resume_hint(grid, history)}")

    expected_src = history[-1].to_pos if history else grid.start
    if step.index != len(history) + 1:
        return fail(f"the next step should be numbered {len(history) + 1}")
    if step.from_pos != expected_src:
        return fail(f"it starts from {_fmt(step.from_pos)} but the previous position is {_fmt(expected_src)}")
    try:
        exp = expected_step(grid, history, step.move_dir)
    except MoveViolation as exc:
        return fail(exc.feedback)
    if step.to_pos != exp.to_pos:
        return fail(f"moving {step.move_dir.value} from {_fmt(exp.from_pos)} reaches {_fmt(exp.to_pos)}, not {_fmt(step.to_pos)}")
    if step.current_pos is not None and step.current_pos != exp.to_pos:
        return fail(f"the current position after this move is {_fmt(exp.to_pos)}, not {_fmt(step.current_pos)}")
    # a blank "Previous direction:" line reads as None, so only a stated value is checked
    if step.prev_dir is not None and step.prev_dir != exp.prev_dir:
        want = exp.prev_dir.value if exp.prev_dir else "empty (this is the first move)"
        return fail(f"the previous direction is {want}, not {step.prev_dir.value}")
    if step.cur_dir is not None and step.cur_dir != step.move_dir:
        return fail(f"the current direction is {step.move_dir.value}, not {step.cur_dir.value}")
    if step.claimed_turn is not None and step.claimed_turn != exp.claimed_turn:
        prev = exp.prev_dir.value if exp.prev_dir else "no previous direction"
        return fail(
            f"going from {prev} to {step.move_dir.value} is {exp.claimed_turn.value}, not {step.claimed_turn.value} "
            "(clockwise changes such as DOWN>LEFT are RIGHT_TURN, counterclockwise ones are LEFT_TURN)"
        )
    rc, ec = step.running_counts, exp.running_counts
    if rc is not None:
        if (rc.right, rc.left) != (ec.right, ec.left) or (rc.total is not None and rc.total != ec.total):
            return fail(f"the running count should be {ec.render() if rc.total is not None else RunningCounts(ec.right, ec.left).render()}")
    return Verdict(True)


@dataclass
class MazeStepVerifier:
    """Per-run verifier for every maze state kind; keeps the accepted history."""

    grid: MazeGrid
    history: list[MazeStepPayload] = field(default_factory=list)

    def verify(self, state: ExtractedState) -> Verdict:
        if state.parse_error is not None:
            return Verdict(
                False,
                f"this block does not follow the required format ({state.parse_error}). "
                "Rewrite it as '>>> STEP n: Move DIR from (r,c) to (r,c)' followed by its fields.",
            )
        if state.kind is StateKind.MAZE_STEP:
            verdict = verify_step(self.grid, self.history, state.payload)
            if verdict.passed:
                self.history.append(state.payload)
            return verdict
        if state.kind is StateKind.MAZE_LOCATE:
            return verify_locate(self.grid, state.payload)
        if state.kind is StateKind.MAZE_FINAL:
            return self._verify_final(state.payload)
        if state.kind is StateKind.MAZE_RELPOS:
            want = relative_position(self.grid.start, self.grid.end)
            if state.payload is want:
                return Verdict(True)
            return Verdict(False, f"E at {_fmt(self.grid.end)} is {want.value.upper()} of S at {_fmt(self.grid.start)}, not {state.payload.value.upper()}.")
        return Verdict(True)

    def _verify_final(self, payload: MazeFinalPayload) -> Verdict:
        if not self.history or self.history[-1].to_pos != self.grid.end:
            where = _fmt(self.history[-1].to_pos) if self.history else _fmt(self.grid.start)
            return Verdict(False, f"the walk stops at {where} and has not reached E at {_fmt(self.grid.end)} yet. Continue stepping.")
        right, left = count_turns([h.move_dir for h in self.history])
        want = {"right": right, "left": left, "total": right + left}[payload.measure]
        if payload.value == want:
            return Verdict(True)
        return Verdict(False, f"the accepted steps give {payload.measure.capitalize()} turns = {want}, not {payload.value}.")


def verify_locate(grid: MazeGrid, payload: LocatePayload) -> Verdict:
    problems = []
    if payload.s_pos != grid.start:
        problems.append(f"S is at {_fmt(grid.start)}, not {_fmt(payload.s_pos)}")
    if payload.e_pos != grid.end:
        problems.append(f"E is at {_fmt(grid.end)}, not {_fmt(payload.e_pos)}")
    if problems:
        return Verdict(False, "; ".join(problems) + ". Read the coordinates again, counting rows and columns from 0.")
    return Verdict(True)


def gold_steps(grid: MazeGrid) -> list[MazeStepPayload]:
    """The fully annotated step sequence along ``grid.path``."""
    steps: list[MazeStepPayload] = []
    for move in grid.moves():
        steps.append(expected_step(grid, steps, move))
    return steps
