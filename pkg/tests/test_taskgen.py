from __future__ import annotations

import pytest
from _support import pairwise_solvable
from hypothesis import given, settings
from hypothesis import strategies as st

from tracewatch.backends import ConfigurationError
from tracewatch.taskgen import (
    LABELS,
    SpatialQuestion,
    TaskKind,
    gen_game24_instance,
    gen_maze_instance,
    gen_spatial_instance,
    generate,
    load_instances,
    maze_grid_of,
    render_metaprompt,
    save_instances,
    spatial_relations_of,
    spatial_store_of,
    template_style,
)
from tracewatch.verifiers.maze import maze_oracle
from tracewatch.verifiers.spatial import entailed_direction, entities_in_direction, satisfiability_oracle
from tracewatch.geometry import Compass


def test_generation_is_deterministic():
    for kind in TaskKind:
        a = [i.to_dict() for i in generate(kind, 3, seed=5)]
        b = [i.to_dict() for i in generate(kind, 3, seed=5)]
        assert a == b


def test_round_trip_through_file(tmp_path):
    insts = generate("maze", 3, 0) + generate("spatialmap", 3, 0) + generate("game24", 2, 0)
    path = tmp_path / "inst.json"
    save_instances(insts, path)
    assert [i.to_dict() for i in load_instances(path)] == [i.to_dict() for i in insts]
    with pytest.raises(ConfigurationError):
        load_instances(tmp_path / "missing.json")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.sampled_from(["right_turns", "total_turns", "relative_position"]))
def test_maze_gold_matches_oracle(seed, qk):
    inst = gen_maze_instance(seed, 9, 9, qk)
    gold_text = inst.option_map[inst.gold]
    want = maze_oracle(maze_grid_of(inst), qk)
    assert gold_text == (want.value if qk == "relative_position" else str(want))
    assert sorted(inst.option_map) == list(LABELS)
    assert len(set(inst.option_map.values())) == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.sampled_from(list(SpatialQuestion)), st.integers(4, 6))
def test_spatial_gold_is_entailed(seed, qk, n):
    if qk is SpatialQuestion.Q1 and n < 5:
        n = 5
    inst = gen_spatial_instance(seed, n, qk)
    rels = spatial_relations_of(inst)
    assert satisfiability_oracle(rels)
    store = spatial_store_of(inst)
    gold_text = inst.option_map[inst.gold]
    if qk is SpatialQuestion.Q0:
        x, y = inst.payload["query"]
        assert entailed_direction(store, x, y).value == gold_text
    else:
        anchor, dname = inst.payload["query"]
        inside = entities_in_direction(store, anchor, Compass[dname])
        if qk is SpatialQuestion.Q1:
            assert gold_text in inside
        else:
            assert gold_text == str(len(inside))


def test_spatial_object_count_bounds():
    with pytest.raises(ValueError):
        gen_spatial_instance(0, 3)
    with pytest.raises(ValueError):
        gen_spatial_instance(0, 4, "Q1")
    assert {i.question_kind for i in generate("spatialmap", 4, 0, n_objects=4)} == {"Q0", "Q2"}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5000), st.booleans())
def test_game24_solvability_label(seed, solvable):
    inst = gen_game24_instance(seed, solvable)
    assert pairwise_solvable(inst.payload["numbers"]) is solvable
    assert inst.gold["solvable"] is solvable


def test_task_kind_accepts_lowercase():
    assert TaskKind("maze") is TaskKind.MAZE
    with pytest.raises(ValueError):
        TaskKind("chess")


@pytest.mark.parametrize("method", ["cot", "stepverify", "bestofk", "tot"])
def test_metaprompts_render_every_field(method):
    for inst in (gen_maze_instance(1), gen_spatial_instance(1), gen_game24_instance(1)):
        text = render_metaprompt(inst, method)
        assert "$" not in text.replace("$$", "")
        assert inst.question in text or " ".join(map(str, inst.payload.get("numbers", []))) in text


def test_structured_prompt_mentions_step_format():
    assert ">>> STEP" in render_metaprompt(gen_maze_instance(1), "stepverify")


def test_unknown_method_template():
    with pytest.raises(ConfigurationError):
        template_style("astrology")
