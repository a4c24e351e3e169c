from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracewatch.extraction import SpatialExtractor
from tracewatch.geometry import Compass, DiagRelation
from tracewatch.verifiers.spatial import (
    RelationStore,
    SpatialVerifier,
    assert_relation,
    entailed_direction,
    entities_in_direction,
    normalize_relation,
    satisfiability_oracle,
    structured_step_to_relations,
    verify_conclusion,
)

NW, NE, SW, SE = Compass.NW, Compass.NE, Compass.SW, Compass.SE


def R(s, d, o):
    return DiagRelation(s, d, o)


def test_normalize_flips_to_sorted_subject():
    assert normalize_relation(R("b", NE, "a")) == R("a", SW, "b")
    assert normalize_relation(R("a", NE, "b")) == R("a", NE, "b")


def test_transitive_contradiction_is_rejected_and_store_untouched():
    store = RelationStore.from_relations([R("A", NW, "B"), R("B", NW, "C")])
    before = store.snapshot()
    v = assert_relation(store, R("C", NW, "A"))
    assert not v.passed
    assert "cycle" in v.feedback and "A is to the Northwest of B" in v.feedback
    assert store.snapshot() == before


def test_reversal_of_asserted_relation_is_consistent():
    store = RelationStore.from_relations([R("A", NW, "B")])
    assert assert_relation(store, R("B", SE, "A")).passed
    assert not assert_relation(store, R("B", NW, "A")).passed


def test_mixed_axes_only_one_cycle_matters():
    # A NW B puts A above B; A SW B would put A below B: row cycle
    store = RelationStore.from_relations([R("A", NW, "B")])
    v = assert_relation(store.copy(), R("A", SW, "B"))
    assert not v.passed and "row axis" in v.feedback
    v = assert_relation(store.copy(), R("A", NE, "B"))
    assert not v.passed and "column axis" in v.feedback


def test_self_relation_and_cardinal_rejected():
    store = RelationStore()
    assert not assert_relation(store, R("A", NW, "A")).passed
    assert not assert_relation(store, R("A", Compass.N, "B")).passed


def test_entailed_direction_by_chain():
    store = RelationStore.from_relations([R("A", NW, "B"), R("B", NW, "C")])
    assert entailed_direction(store, "A", "C") is NW
    assert entailed_direction(store, "C", "A") is SE


def test_underdetermined_direction_is_none():
    store = RelationStore.from_relations([R("A", NW, "B"), R("C", NE, "B")])
    assert entailed_direction(store, "A", "C") is None
    assert verify_conclusion(store, R("A", NW, "C")).passed  # consistent, not contradicted
    assert verify_conclusion(store, R("A", Compass.W, "C")).passed is False


def test_cardinal_requires_both_flanks():
    store = RelationStore.from_relations([R("A", NW, "B")])
    assert not verify_conclusion(store, R("A", Compass.N, "B")).passed
    # a consistent store can never hold both flanks, so the cardinal rule stays silent
    assert not assert_relation(store.copy(), R("A", NE, "B")).passed


def test_conclusion_against_entailed_fact():
    store = RelationStore.from_relations([R("A", NW, "B"), R("B", NW, "C")])
    v = verify_conclusion(store, R("A", NE, "C"))
    assert not v.passed
    assert verify_conclusion(store, R("A", NW, "C")).passed
    assert "not an object" in verify_conclusion(store, R("Zed", NW, "C")).feedback


def test_entities_in_direction():
    store = RelationStore.from_relations([R("A", SW, "X"), R("B", SW, "A"), R("C", NE, "X")])
    assert entities_in_direction(store, "X", SW) == {"A", "B"}


def test_structured_step_parsing():
    rels, errors = structured_step_to_relations(
        ">>> STEP 1\n- A Shop is to the Northwest of B Shop\n* C Shop is to the North of A Shop\nno relation here\n"
    )
    assert rels == [R("A Shop", NW, "B Shop"), R("C Shop", Compass.N, "A Shop")]
    assert len(errors) == 1


def test_verifier_flags_unlisted_relation():
    store = RelationStore.from_relations([R("Ant Hill", NW, "Bee Barn"), R("Bee Barn", NW, "Cat Cafe")])
    text = (
        ">>> STEP 1: PARSE RELATIONSHIPS\n- Ant Hill is to the Northwest of Bee Barn\n"
        "- Ant Hill is to the Northwest of Cat Cafe\n\n>>> STEP 2: X\n"
    )
    states, _ = SpatialExtractor().scan(text, 0, final=True)
    v = SpatialVerifier(store).verify(states[0])
    assert v.passed  # entailed, so it is allowed in the parsed list
    bogus = text.replace("Ant Hill is to the Northwest of Cat Cafe", "Cat Cafe is to the Southwest of Ant Hill")
    states, _ = SpatialExtractor().scan(bogus, 0, final=True)
    assert not SpatialVerifier(store).verify(states[0]).passed


NAMES = ["a", "b", "c", "d", "e"]
relations = st.lists(
    st.builds(R, st.sampled_from(NAMES), st.sampled_from([NW, NE, SW, SE]), st.sampled_from(NAMES)),
    max_size=8,
)


@settings(max_examples=300, deadline=None)
@given(relations)
def test_store_consistency_matches_brute_force(rels):
    store, ok = RelationStore(), True
    for r in rels:
        ok &= assert_relation(store, r).passed
    assert ok == satisfiability_oracle(rels)
    assert store.is_consistent()


@settings(max_examples=200, deadline=None)
@given(relations)
def test_rejection_never_mutates(rels):
    store = RelationStore()
    for r in rels:
        before = store.snapshot()
        if not assert_relation(store, r).passed:
            assert store.snapshot() == before


def test_oracle_refuses_large_sets():
    rels = [R(f"n{i}", NW, f"n{i + 1}") for i in range(7)]
    with pytest.raises(ValueError):
        satisfiability_oracle(rels)
