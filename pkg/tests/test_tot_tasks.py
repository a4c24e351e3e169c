from __future__ import annotations

import dataclasses
import re

import pytest

from tracewatch.backends import BackendConfig, ConfigurationError
from tracewatch.baselines import ToTConfig, Valuer, tot_search
from tracewatch.geometry import TurnType
from tracewatch.monitor import RunStatus
from tracewatch.taskgen import gen_spatial_instance, maze_grid_of, spatial_store_of
from tracewatch.tasks import NO_ANSWER, judge_correct
from tracewatch.tot_tasks import Game24ToT, MazeToT, SpatialToT, tot_task_for
from tracewatch.verifiers.maze import gold_steps
from tracewatch.verifiers.spatial import entailed_direction


def test_game24_replay_and_answer():
    task = Game24ToT((3, 3, 8, 8))
    path = ["8 / 3 = 8/3", "3 - 8/3 = 1/3", "8 / 1/3 = 24"]
    assert task.remaining(path[:1]) == ["3", "8", "8/3"]
    assert task.step_verify(path) and task.is_terminal(path)
    assert task.answer(path) == "8 / (3 - (8 / 3))"
    assert not task.step_verify(["8 + 8 = 17"])
    assert not task.step_verify(["5 + 8 = 13"])
    assert not task.step_verify(["3 + 3 = 6", "8 + 8 = 16", "6 + 16 = 22"])  # terminal but not 24
    assert task.parse_proposals("a) 3 + 3 = 6\nb) 8 * 8 = 64\n") == ["3 + 3 = 6", "8 * 8 = 64"]


def test_maze_adapter_walks_gold_path(maze_instance):
    task = MazeToT(maze_instance)
    steps = [s.render() for s in gold_steps(maze_grid_of(maze_instance))]
    for i in range(1, len(steps) + 1):
        assert task.step_verify(steps[:i])
        assert task.is_terminal(steps[:i]) is (i == len(steps))
    assert task.answer(steps) == maze_instance.gold
    bad = dataclasses.replace(gold_steps(maze_grid_of(maze_instance))[0], claimed_turn=TurnType.LEFT_TURN)
    assert not task.step_verify([bad.render()])
    assert task.parse_proposals(steps[0] + steps[1]) == steps[:2]


def test_maze_tot_search_with_scripted_proposer(maze_instance):
    task = MazeToT(maze_instance)
    steps = [s.render() for s in gold_steps(maze_grid_of(maze_instance))]
    wrong = dataclasses.replace(gold_steps(maze_grid_of(maze_instance))[0], claimed_turn=TurnType.RIGHT_TURN).render()

    def fn(prompt, seed):
        done = len(re.findall(r">>> STEP \d", prompt))
        return (wrong if done == 0 else "") + steps[done] if done < len(steps) else ""

    result = tot_search(BackendConfig(kind="function", fn=fn), task, ToTConfig(max_depth=len(steps)), Valuer.STEP_VERIFIER)
    assert result.status is RunStatus.COMPLETED
    assert judge_correct(maze_instance, result.answer)


def test_spatial_adapter(spatial_instance):
    task = SpatialToT(spatial_instance)
    x, y = spatial_instance.payload["query"]
    d = entailed_direction(spatial_store_of(spatial_instance), x, y)
    line = f"{x} is to the {d.value} of {y}.\n"
    assert task.parse_proposals(line) == [line]
    assert task.step_verify([line]) and task.is_terminal([line])
    assert task.answer([line]) == spatial_instance.gold
    wrong = f"{x} is to the {d.opposite().value} of {y}.\n"
    assert not task.step_verify([wrong])
    assert task.answer([]) == NO_ANSWER


def test_spatial_adapter_rejects_other_question_kinds():
    with pytest.raises(ConfigurationError):
        SpatialToT(gen_spatial_instance(0, 5, "Q1"))


def test_tot_task_for(maze_instance, spatial_instance, game24_instance):
    assert isinstance(tot_task_for(maze_instance), MazeToT)
    assert isinstance(tot_task_for(spatial_instance), SpatialToT)
    assert isinstance(tot_task_for(game24_instance), Game24ToT)
