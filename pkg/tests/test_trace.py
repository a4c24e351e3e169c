from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tracewatch.backends.mock import tokenize
from tracewatch.extraction import AnswerExtractor
from tracewatch.trace import (
    END_THINK,
    ActionKind,
    ContractViolation,
    InsertAt,
    InterventionAction,
    Origin,
    ReasoningTrace,
    apply_intervention,
    scan_for_states,
)


def build(*pieces: str) -> ReasoningTrace:
    t = ReasoningTrace("p")
    for piece in pieces:
        t.append_model(piece)
    return t


def test_append_merges_model_tokens():
    t = build("Hello", " ", "world")
    assert t.text == "Hello world"
    assert len(t.segments) == 1
    assert t.reasoning_tokens == 3


def test_injection_moves_cursors_to_end():
    t = build("abc")
    t.cursors["x"] = 1
    t.append_intervention("Wait, no.", 4)
    assert t.cursors["x"] == len(t.text)
    assert t.injected_tokens == 4
    assert [s.origin for s in t.segments] == [Origin.MODEL, Origin.INTERVENTION]


def test_truncate_counts_discarded_tokens():
    t = build("one", " ", "two", " ", "three")
    t.truncate(7)
    assert t.text == "one two"
    assert t.reasoning_tokens == 3
    assert t.discarded_tokens == 2


def test_truncate_inside_token_keeps_partial_token():
    t = build("alpha", "beta")
    t.truncate(7)
    assert t.text == "alphabe"
    assert t.reasoning_tokens == 2
    assert t.discarded_tokens == 0


def test_truncate_refuses_to_cut_injected_text():
    t = build("abc")
    t.append_intervention("XYZ", 1)
    with pytest.raises(ContractViolation):
        t.truncate(4)


def test_prefix_is_independent_copy():
    t = build("a", "b", "c")
    p = t.prefix(2)
    p.append_model("z")
    assert t.text == "abc"
    assert p.text == "abz"


def test_inject_text_after_state_discards_overshoot():
    t = build("step one.", " overshoot")
    act = InterventionAction(ActionKind.INJECT_TEXT, "redo step one.")
    apply_intervention(t, act, (0, 9), token_counter=lambda s: 1)
    assert t.text == "step one.Wait, redo step one."
    assert t.discarded_tokens == 1


def test_inject_at_tail_keeps_overshoot():
    t = build("step one.", " more")
    act = InterventionAction(ActionKind.INJECT_TEXT, "hm.", InsertAt.AT_TAIL)
    apply_intervention(t, act, (0, 9), feedback_prefix="", token_counter=lambda s: 1)
    assert t.text == "step one. morehm."


def test_end_think_closes_once():
    t = build("thinking")
    act = InterventionAction(ActionKind.INJECT_END_THINK)
    apply_intervention(t, act, (0, 8))
    assert t.think_closed
    assert t.text.startswith("thinking" + END_THINK)
    with pytest.raises(ContractViolation):
        apply_intervention(t, act, (0, 8))


def test_halt_freezes_trace():
    t = build("x")
    apply_intervention(t, InterventionAction(ActionKind.HALT), (0, 1))
    with pytest.raises(ContractViolation):
        t.append_model("y")


def test_span_outside_text_is_rejected():
    t = build("abc")
    with pytest.raises(ContractViolation):
        apply_intervention(t, InterventionAction(ActionKind.HALT), (0, 10))


def test_continue_is_noop():
    t = build("abc")
    apply_intervention(t, InterventionAction(ActionKind.CONTINUE), (0, 3))
    assert t.text == "abc" and not t.frozen


@pytest.mark.parametrize("kind,payload", [(ActionKind.INJECT_TEXT, None), (ActionKind.HALT, "x")])
def test_action_payload_contract(kind, payload):
    with pytest.raises(ValueError):
        InterventionAction(kind, payload)


def test_default_token_counter_uses_mock_tokenizer():
    t = build("abc")
    apply_intervention(t, InterventionAction(ActionKind.INJECT_TEXT, "two words"), (0, 3))
    assert t.injected_tokens == len(tokenize("Wait, two words"))


def test_scan_withholds_partial_state_and_advances_cursor():
    t = build("so the answer is B")
    ex = AnswerExtractor()
    assert scan_for_states(t, ex) == []
    t.append_model(".\n")
    states = scan_for_states(t, ex)
    assert [s.payload for s in states] == ["B"]
    assert t.cursors["answer"] == len(t.text)
    assert scan_for_states(t, ex) == []


def test_injected_text_is_never_scanned():
    t = build("thinking\n")
    t.cursors["answer"] = 0
    t.append_intervention("the answer is C.\n", 5)
    t.append_model("more\n")
    assert scan_for_states(t, AnswerExtractor()) == []


@given(st.lists(st.tuples(st.booleans(), st.text(min_size=1, max_size=12)), max_size=12))
def test_round_trip(parts):
    t = ReasoningTrace("prompt")
    for injected, text in parts:
        if injected:
            t.append_intervention(text, len(text))
        else:
            t.append_model(text)
    back = ReasoningTrace.from_dict(t.to_dict())
    assert back.text == t.text
    assert back.to_dict() == t.to_dict()
