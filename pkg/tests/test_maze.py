from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracewatch.extraction import MazeExtractor, RunningCounts, StateKind
from tracewatch.geometry import Direction, RelPos, TurnType
from tracewatch.taskgen import gen_maze_grid
from tracewatch.verifiers.maze import (
    MazeError,
    MazeStepVerifier,
    MoveViolation,
    QuestionKind,
    classify_turn,
    count_turns,
    gold_steps,
    maze_oracle,
    parse_maze,
    relative_position,
    render_maze,
    simulate_move,
    verify_step,
)

SMALL = "#####\n#S* #\n##*##\n# *E#\n#####"

# hand-derived: RIGHT, DOWN, DOWN, RIGHT makes one right turn then one left turn
SMALL_MOVES = [Direction.RIGHT, Direction.DOWN, Direction.DOWN, Direction.RIGHT]

# turn type for (prev, cur) pairs, derived by hand with rows growing downward
TURN_TABLE = {
    ("UP", "RIGHT"): TurnType.RIGHT_TURN,
    ("RIGHT", "DOWN"): TurnType.RIGHT_TURN,
    ("DOWN", "LEFT"): TurnType.RIGHT_TURN,
    ("LEFT", "UP"): TurnType.RIGHT_TURN,
    ("UP", "LEFT"): TurnType.LEFT_TURN,
    ("LEFT", "DOWN"): TurnType.LEFT_TURN,
    ("DOWN", "RIGHT"): TurnType.LEFT_TURN,
    ("RIGHT", "UP"): TurnType.LEFT_TURN,
    ("UP", "DOWN"): TurnType.REVERSAL,
    ("LEFT", "RIGHT"): TurnType.REVERSAL,
}


def test_parse_small_maze():
    g = parse_maze(SMALL)
    assert (g.height, g.width, g.start, g.end) == (5, 5, (1, 1), (3, 3))
    assert g.moves() == SMALL_MOVES
    assert render_maze(g) == SMALL


@pytest.mark.parametrize(
    "text,needle",
    [
        ("#S#\n#E", "ragged"),
        ("#S#\n#X#\n#E#", "unknown symbol"),
        ("SS#\n#E#", "exactly one S"),
        ("#S#\n# #\n#E#", None),
        ("S* \n  *\n *E", "disconnected"),
    ],
)
def test_parse_errors(text, needle):
    if needle is None:
        assert parse_maze(text).path is None
        return
    with pytest.raises(MazeError, match=needle):
        parse_maze(text)


@pytest.mark.parametrize("pair,want", TURN_TABLE.items())
def test_turn_table(pair, want):
    assert classify_turn(Direction(pair[0]), Direction(pair[1])) is want


def test_first_move_and_straight():
    assert classify_turn(None, Direction.LEFT) is TurnType.STRAIGHT
    assert classify_turn(Direction.UP, Direction.UP) is TurnType.STRAIGHT


def test_small_maze_oracle():
    g = parse_maze(SMALL)
    assert count_turns(g.moves()) == (1, 1)
    assert maze_oracle(g, QuestionKind.RIGHT_TURNS) == 1
    assert maze_oracle(g, "total_turns") == 2
    assert maze_oracle(g, "relative_position") is RelPos.BOTTOM_RIGHT


@pytest.mark.parametrize(
    "s,e,want",
    [((3, 5), (1, 1), RelPos.TOP_LEFT), ((1, 1), (1, 4), RelPos.DIRECTLY_RIGHT), ((4, 2), (0, 2), RelPos.DIRECTLY_ABOVE),
     ((0, 0), (2, 3), RelPos.BOTTOM_RIGHT), ((2, 3), (4, 1), RelPos.BOTTOM_LEFT)],
)
def test_relative_position(s, e, want):
    assert relative_position(s, e) is want


def test_simulate_move_rejects_walls_and_bounds():
    g = parse_maze(SMALL)
    assert simulate_move(g, (1, 1), Direction.RIGHT) == (1, 2)
    with pytest.raises(MoveViolation, match="wall"):
        simulate_move(g, (1, 1), Direction.UP)
    open_grid = parse_maze("S E")
    with pytest.raises(MoveViolation, match="leaves the grid"):
        simulate_move(open_grid, (0, 0), Direction.LEFT)


def test_gold_steps_verify_and_count():
    g = parse_maze(SMALL)
    steps = gold_steps(g)
    assert [s.claimed_turn for s in steps] == [TurnType.STRAIGHT, TurnType.RIGHT_TURN, TurnType.STRAIGHT, TurnType.LEFT_TURN]
    assert steps[-1].running_counts == RunningCounts(1, 1, 2)
    history = []
    for s in steps:
        assert verify_step(g, history, s).passed
        history.append(s)


@pytest.mark.parametrize(
    "field,value,needle",
    [
        ("claimed_turn", TurnType.LEFT_TURN, "RIGHT_TURN"),
        ("running_counts", RunningCounts(0, 0), "running count"),
        ("to_pos", (1, 3), "reaches"),
        ("from_pos", (1, 1), "previous position"),
        ("index", 5, "numbered 2"),
        ("prev_dir", Direction.UP, "previous direction"),
    ],
)
def test_corrupted_second_step_fails_with_feedback(field, value, needle):
    g = parse_maze(SMALL)
    steps = gold_steps(g)
    bad = dataclasses.replace(steps[1], **{field: value})
    v = verify_step(g, steps[:1], bad)
    assert not v.passed
    assert needle in v.feedback
    assert "Resume from the last valid state: STEP 1 ended at (1,2)" in v.feedback


def test_blank_previous_direction_is_accepted():
    g = parse_maze(SMALL)
    steps = gold_steps(g)
    assert verify_step(g, steps[:1], dataclasses.replace(steps[1], prev_dir=None)).passed


def test_verifier_tracks_history_and_final_answer():
    g = parse_maze(SMALL)
    text = "".join(s.render() + "\n" for s in gold_steps(g)) + ">>> FINAL ANSWER: Right turns = 1\n"
    states, _ = MazeExtractor().scan(text, 0, final=True)
    v = MazeStepVerifier(g)
    verdicts = [v.verify(s) for s in states]
    assert all(x.passed for x in verdicts), [x.feedback for x in verdicts]
    assert states[-1].kind is StateKind.MAZE_FINAL


def test_final_before_reaching_exit_fails():
    g = parse_maze(SMALL)
    text = gold_steps(g)[0].render() + "\n>>> FINAL ANSWER: Right turns = 0\n"
    states, _ = MazeExtractor().scan(text, 0, final=True)
    v = MazeStepVerifier(g)
    assert v.verify(states[0]).passed
    assert "has not reached E" in v.verify(states[1]).feedback


def cross_turns(moves):
    """Independent recount via the sign of the 2D cross product in (row, col) coordinates."""
    right = left = 0
    for a, b in zip(moves, moves[1:]):
        cross = a.delta[0] * b.delta[1] - a.delta[1] * b.delta[0]
        right += cross < 0
        left += cross > 0
    return right, left


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_generated_mazes_agree_with_cross_product_recount(seed):
    g = gen_maze_grid(seed, 9, 9)
    assert count_turns(g.moves()) == cross_turns(g.moves())
    assert parse_maze(render_maze(g)) == g
