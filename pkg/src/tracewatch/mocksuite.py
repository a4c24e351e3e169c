"""Builders for scripted mock traces used by tests, demos and the sweep suites.

Every builder returns a plain script dict for :class:`tracewatch.backends.mock.MockScript`.
Error-injecting scripts end their first node right after the faulty state and
carry a catch-all branch (key ``""``) to a corrected continuation, so a run
with a step verifier recovers while unmonitored playback keeps the error.
"""

from __future__ import annotations

import dataclasses
import json
import random
from pathlib import Path
from typing import Any, Iterable, Sequence

from tracewatch.backends.mock import MockScript, tokenize
from tracewatch.extraction import LocatePayload, MazeFinalPayload, render_relation_set
from tracewatch.geometry import Compass, DiagRelation, TurnType
from tracewatch.taskgen import (
    TaskInstance,
    TaskKind,
    maze_grid_of,
    spatial_relations_of,
    spatial_store_of,
)
from tracewatch.trace import DEFAULT_ANSWER_PROMPT, END_THINK
from tracewatch.verifiers.game24 import evaluate_exact, parse_expression
from tracewatch.verifiers.maze import QuestionKind, gold_steps, relative_position
from tracewatch.verifiers.spatial import entailed_direction

CATCH_ALL = ""
MAZE_CORRUPTIONS = ("turn", "count", "position")


def linear_script(text: str, final_answer_tail: str | None = None) -> dict[str, Any]:
    return {"text": text, "final_answer_tail": final_answer_tail}


def write_scripts(scripts: dict[str, dict[str, Any]], directory: str | Path) -> Path:
    """Write ``{instance_id: script}`` as ``directory/{instance_id}.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for iid, script in scripts.items():
        (d / f"{iid}.json").write_text(json.dumps(script, indent=1), encoding="utf-8")
    return d


def _with_fix(head: str, tail_default: str, fix: str, *, stubborn: bool, answer_tail: str | None) -> dict[str, Any]:
    """Two-way script: ``head`` ends at the faulty state; feedback selects ``fix``.

    A stubborn script repeats the faulty state after every feedback, so the
    run exhausts its intervention budget.
    """
    nodes: dict[str, Any] = {
        "head": {"text": head, "next": "rest", "branches": {CATCH_ALL: "fix"}},
        "rest": {"text": tail_default},
        "fix": {"text": fix},
    }
    if stubborn:
        nodes["fix"].update(next="rest", branches={CATCH_ALL: "fix"})
    return {"root": "head", "nodes": nodes, "final_answer_tail": answer_tail}


# ---------------------------------------------------------------------------
# maze

def _corrupt_step(step, how: str):
    if how == "turn":
        wrong = next(t for t in (TurnType.RIGHT_TURN, TurnType.LEFT_TURN, TurnType.STRAIGHT) if t is not step.claimed_turn)
        return dataclasses.replace(step, claimed_turn=wrong)
    if how == "count":
        rc = step.running_counts
        return dataclasses.replace(step, running_counts=dataclasses.replace(rc, right=rc.right + 1,
                                                                             total=None if rc.total is None else rc.total + 1))
    if how == "position":
        r, c = step.to_pos
        moved = (r + 1, c) if step.move_dir.name in ("LEFT", "RIGHT") else (r, c + 1)
        return dataclasses.replace(step, to_pos=moved, current_pos=moved)
    raise ValueError(f"unknown corruption {how!r}")


def maze_answer_text(instance: TaskInstance) -> str:
    grid = maze_grid_of(instance)
    qk = QuestionKind(instance.question_kind)
    if qk is QuestionKind.RELATIVE_POSITION:
        line = f"Therefore E is at the {relative_position(grid.start, grid.end).value} of S.\n"
    else:
        steps = gold_steps(grid)
        rc = steps[-1].running_counts if steps else None
        right = rc.right if rc else 0
        total = (rc.right + rc.left) if rc else 0
        measure, value = ("right", right) if qk is QuestionKind.RIGHT_TURNS else ("total", total)
        line = MazeFinalPayload(measure, value).render()
    return f"\n{line}So the answer is \\boxed{{{instance.gold}}}.\n"


def maze_script(instance: TaskInstance, error_step: int | None = None, corruption: str = "turn",
                stubborn: bool = False) -> dict[str, Any]:
    """Structured maze walk; ``error_step`` (1-based) gets corrupted once."""
    grid = maze_grid_of(instance)
    intro = "I will locate S and E and then follow the marked path.\n\n" + LocatePayload(grid.start, grid.end).render() + "\n"
    blocks = [s.render() for s in gold_steps(grid)]
    answer = maze_answer_text(instance)
    if error_step is None:
        return linear_script(intro + "".join(blocks) + answer)
    if not 1 <= error_step <= len(blocks):
        raise ValueError("error_step out of range")
    i = error_step - 1
    bad = _corrupt_step(gold_steps(grid)[i], corruption).render()
    head = intro + "".join(blocks[:i]) + bad
    rest = "".join(blocks[i + 1 :]) + answer
    fix = "\n" + ("".join(blocks[i:]) + answer if not stubborn else bad)
    return _with_fix(head, rest, fix, stubborn=stubborn, answer_tail=None)


# ---------------------------------------------------------------------------
# spatial maps

def _diag_pairs(instance: TaskInstance) -> list[tuple[str, str, Compass]]:
    store = spatial_store_of(instance)
    names = instance.payload["entities"]
    out = []
    for x in names:
        for y in names:
            if x != y:
                d = entailed_direction(store, x, y)
                if d is not None and d.is_diagonal:
                    out.append((x, y, d))
    return out


def spatial_script(instance: TaskInstance, with_error: bool = False, stubborn: bool = False) -> dict[str, Any]:
    """Relation list, one conclusion line per entailed pair involving the query, then the boxed label."""
    rels = spatial_relations_of(instance)
    anchor = instance.payload["query"][0] if instance.question_kind != "Q0" else instance.payload["query"][1]
    pairs = [p for p in _diag_pairs(instance) if anchor in p[:2]] or _diag_pairs(instance)
    lines = [DiagRelation(x, d, y).render() + ".\n" for x, y, d in pairs[:3]]
    head = "Listing what the description says.\n\n" + render_relation_set(rels) + "\n>>> STEP 2: FIND DIRECT RELATIONSHIP\n"
    end = f"\n>>> STEP 3: ANSWER\nSo the answer is \\boxed{{{instance.gold}}}.\n"
    if not with_error:
        return linear_script(head + "".join(lines) + end)
    x, y, d = pairs[0]
    bad = DiagRelation(x, d.opposite(), y).render() + ".\n"
    return _with_fix(head + bad, "".join(lines) + end, "\n" + (bad if stubborn else "".join(lines) + end),
                     stubborn=stubborn, answer_tail=None)


# ---------------------------------------------------------------------------
# Game of 24

def _wrong_expression(nums: Sequence[int]) -> str:
    a, b, c, d = nums
    for cand in (f"{a} + {b} + {c} + {d}", f"{a} * {b} + {c} + {d}", f"{a} * {b} * {c} - {d}", f"({a} + {b}) * ({c} + {d})"):
        if evaluate_exact(parse_expression(cand)) != 24:
            return cand
    raise ValueError(f"no wrong expression found for {nums}")


def game24_script(instance: TaskInstance, with_error: bool = False, stubborn: bool = False) -> dict[str, Any]:
    nums = instance.payload["numbers"]
    witness = instance.gold.get("witness")
    intro = f"The numbers are {', '.join(map(str, nums))}. Let me try combinations.\n"
    if witness is None:
        good = "None of the combinations reach 24, so there is no solution.\n"
    else:
        good = f"{witness} = 24\nThe final equation is {witness} = 24.\n"
    if not with_error:
        return linear_script(intro + good)
    bad = f"{_wrong_expression(nums)} = 24\n"
    fix = "\n" + (bad if stubborn else "Let me try a different grouping.\n" + good)
    return _with_fix(intro + bad, "That should work.\n", fix, stubborn=stubborn, answer_tail=None)


# ---------------------------------------------------------------------------
# suites

def step_verifier_suite(instances: Sequence[TaskInstance], *, error_rate: float = 0.7, stubborn_rate: float = 0.1,
                        seed: int = 0) -> dict[str, dict[str, Any]]:
    """Scripts for the step-verifier soundness suite.

    A share of the scripts inject an error that the corrected branch fixes;
    a smaller share repeat the error and end up abstaining.
    """
    rng = random.Random(f"suite-{seed}")
    out: dict[str, dict[str, Any]] = {}
    for inst in instances:
        roll = rng.random()
        stubborn = roll < stubborn_rate
        err = stubborn or roll < error_rate
        if inst.kind is TaskKind.MAZE:
            n = len(gold_steps(maze_grid_of(inst)))
            out[inst.id] = maze_script(inst, rng.randint(1, n) if err else None, rng.choice(MAZE_CORRUPTIONS), stubborn)
        elif inst.kind is TaskKind.SPATIALMAP:
            out[inst.id] = spatial_script(inst, err, stubborn)
        else:
            out[inst.id] = game24_script(inst, err, stubborn)
    return out


def answer_sequence_script(proposals: Sequence[str], *, filler: str = "Let me reconsider the question.",
                           post: str = "", final: str | None = None) -> dict[str, Any]:
    """Reasoning that proposes ``proposals`` in order, then ``post`` and a natural close.

    Each proposal ends a node whose answer tail repeats that proposal, so a
    stopper that fires there yields the latest proposal as the final answer.
    """
    if not proposals:
        raise ValueError("need at least one proposal")
    final = final or proposals[-1]
    nodes: dict[str, Any] = {}
    for i, label in enumerate(proposals):
        lead = ".\n" if i else ""
        nodes[f"p{i}"] = {"text": f"{lead}{filler} I think the answer is {label}", "next": f"p{i + 1}",
                          "final_answer_tail": f" {label}."}
    nodes[f"p{len(proposals)}"] = {"text": f".\n{post}{END_THINK}{DEFAULT_ANSWER_PROMPT} {final}."}
    return {"root": "p0", "nodes": nodes}


def post_stabilization_tokens(script: dict[str, Any], after: int) -> int:
    """Tokens a natural run spends after proposal ``after`` (1-based), net of the answer tail."""
    ms = MockScript.from_dict(script)
    ids = list(ms.nodes)
    spent = sum(len(ms.nodes[nid].tokens) for nid in ids[after:])
    tail = ms.nodes[ids[after - 1]].final_answer_tail or ""
    return spent - len(tokenize(tail))


def kstable_sweep_suite(instances: Sequence[TaskInstance], pattern: str, *, post_words: int = 60
                        ) -> dict[str, dict[str, Any]]:
    """Answer-sequence scripts for the k sweep.

    ``pattern`` ``"flip"``: the model settles on a wrong label twice before
    moving to the gold label for good, so k=2 stops on the wrong answer and
    k=3 is the cheapest accurate setting. ``"settle"``: the gold label is
    repeated from the start, so k=2 is optimal and large k never fires.
    """
    post = " ".join(["Double-checking the remaining cases."] * (post_words // 4)) + "\n"
    out = {}
    for inst in instances:
        gold = inst.gold
        wrong = next(lbl for lbl, _ in inst.options if lbl != gold)
        if pattern == "flip":
            seq = [wrong, wrong, gold, gold, gold, gold]
        elif pattern == "settle":
            seq = [gold, gold, gold, gold]
        else:
            raise ValueError(f"unknown pattern {pattern!r}")
        out[inst.id] = answer_sequence_script(seq, post=post, final=gold)
    return out


def sample_pool(texts: Iterable[str]) -> dict[str, Any]:
    """A ``samples`` container: seed i plays ``texts[i]``."""
    return {"samples": [linear_script(t) for t in texts]}
