from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracewatch.stopping import (
    Aggregation,
    Decision,
    DeerConfig,
    DualStableVerifier,
    EntropyTracker,
    EquivalenceChecker,
    EquivalenceMode,
    MonitorError,
    StabilityCounter,
    aggregate_confidence,
    chunk_boundaries,
    deer_confidence,
    dual_counter_update,
    kstable_update,
    normalize_payload,
    shannon_entropy,
    stopping_time,
)
from tracewatch.trace import ReasoningTrace

# hand-worked stopping indices for one proposal sequence
SEQ = ["A", "B", "B", "C", "C", "C", "C", "C"]
EXPECTED = {1: 1, 2: 3, 3: 6, 5: 8, 6: None}


@pytest.mark.parametrize("k,want", EXPECTED.items())
def test_stopping_time_hand_computed(k, want):
    assert stopping_time(SEQ, k) == want


def test_normalization_absorbs_case_space_and_punctuation():
    assert normalize_payload("  The   Answer. ") == "the answer"
    assert stopping_time(["B", "b.", " B "], 3) == 3
    assert stopping_time(["B", "b."], 2, EquivalenceChecker(EquivalenceMode.EXACT)) is None


def test_pluggable_judge_is_symmetric_and_failures_abort():
    calls = []

    def judge(a, b):
        calls.append((a, b))
        return {a, b} == {"24", "twenty-four"}

    checker = EquivalenceChecker(EquivalenceMode.PLUGGABLE, judge)
    assert checker.equivalent("twenty-four", "24") and checker.equivalent("24", "twenty-four")
    assert calls[0] == calls[1]
    broken = EquivalenceChecker(EquivalenceMode.PLUGGABLE, lambda a, b: 1 / 0)
    with pytest.raises(MonitorError):
        broken.equivalent("x", "y")
    with pytest.raises(ValueError):
        EquivalenceChecker(EquivalenceMode.PLUGGABLE)


def test_counter_requires_positive_k():
    with pytest.raises(ValueError):
        StabilityCounter(0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("ABC"), max_size=20), st.integers(1, 6))
def test_stopping_time_is_monotone_in_k(seq, k):
    a, b = stopping_time(seq, k), stopping_time(seq, k + 1)
    if b is not None:
        assert a is not None and a <= b


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("AB"), max_size=20), st.integers(1, 5))
def test_stop_means_last_k_equal(seq, k):
    t = stopping_time(seq, k)
    if t is not None:
        assert len(set(seq[t - k:t])) == 1 and t >= k


def test_dual_counter_needs_both_families():
    pre, post = StabilityCounter(2), StabilityCounter(2)
    assert dual_counter_update(pre, post, "PRE", "x>0") is Decision.CONTINUE
    assert dual_counter_update(pre, post, "PRE", "x>0") is Decision.CONTINUE
    assert dual_counter_update(pre, post, "POST", "r>=0") is Decision.CONTINUE
    assert dual_counter_update(pre, post, "POST", "r>=0") is Decision.STOP
    with pytest.raises(ValueError):
        dual_counter_update(StabilityCounter(2), StabilityCounter(3), "PRE", "x")


def test_dual_stable_verifier_reads_family():
    class P:
        def __init__(self, family, body):
            self.family, self.body = family, body

    class S:
        def __init__(self, payload):
            self.payload = payload

    v = DualStableVerifier(k=1)
    assert not v.verify(S(P("pre", "a"))).passed
    assert v.verify(S(P("postcondition", "b"))).passed


@pytest.mark.parametrize("n", [2, 4, 20])
def test_uniform_entropy_is_log_n(n):
    lp = -math.log(n)
    assert abs(shannon_entropy([(str(i), lp) for i in range(n)]) - math.log(n)) < 1e-12


def test_entropy_renormalizes_truncated_tables():
    # two alternatives at equal mass that do not sum to one still give ln 2
    assert abs(shannon_entropy([("a", -3.0), ("b", -3.0)]) - math.log(2)) < 1e-12
    assert shannon_entropy([("a", 0.0)]) == 0.0
    with pytest.raises(ValueError):
        shannon_entropy([])


def test_ema_with_alpha_one_is_raw_threshold():
    tracker = EntropyTracker(threshold=0.5, alpha=1.0)
    decisions = [tracker.update(h) for h in (0.9, 0.4, 0.7, 0.2)]
    assert decisions == [Decision.CONTINUE, Decision.STOP, Decision.CONTINUE, Decision.STOP]


def test_ema_smoothing_hand_computed():
    tracker = EntropyTracker(threshold=0.5, alpha=0.5)
    tracker.update(1.0)
    tracker.update(0.0)
    assert tracker.ema == pytest.approx(0.5, abs=1e-12)
    assert tracker.update(0.0) is Decision.STOP  # 0.25


@pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha": 1.5}, {"threshold": 0.0}])
def test_tracker_validation(kw):
    with pytest.raises(ValueError):
        EntropyTracker(**{"threshold": 0.5, **kw})


def test_aggregate_confidence():
    lps = [math.log(0.9), math.log(0.4)]
    assert abs(aggregate_confidence(lps) - math.sqrt(0.9 * 0.4)) < 1e-12
    assert abs(aggregate_confidence(lps, Aggregation.MIN) - 0.4) < 1e-12
    assert aggregate_confidence([]) == 0.0


def test_deer_confidence_reads_greedy_answer():
    class Probe:
        tables = {
            "P": [(" B", math.log(0.8)), (" A", math.log(0.2))],
            "P B": [(".", math.log(0.9))],
        }

        def probe_next_distribution(self, trace, suffix):
            return self.tables.get(suffix, [])

    answer, conf = deer_confidence(DeerConfig(0.5, probe_suffix="P"), Probe(), ReasoningTrace("q"))
    assert answer == "B"
    assert abs(conf - 0.8) < 1e-12


def test_deer_threshold_validation():
    with pytest.raises(ValueError):
        DeerConfig(1.0)


def test_chunk_boundaries_need_confirmation():
    text = "para one\n\npara two\n\n"
    assert chunk_boundaries(text, final=False) == [10]
    assert chunk_boundaries(text, final=True) == [10, 20]
    assert chunk_boundaries("a\n\n\n  b", final=False) == [4]
    assert chunk_boundaries(text, 11, final=True) == [20]


def test_kstable_update_matches_stopping_time():
    counter = StabilityCounter(3)
    decisions = [kstable_update(counter, p) for p in SEQ]
    assert decisions.index(Decision.STOP) + 1 == EXPECTED[3]
