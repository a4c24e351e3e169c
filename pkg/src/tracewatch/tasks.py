"""Per-task wiring: which extractors and verifiers a method binds, and how answers are judged."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from tracewatch.extraction import AnswerExtractor, EquationExtractor, MazeExtractor, SpatialExtractor
from tracewatch.monitor import ProbeBinding, VerifierBinding, emitted_states
from tracewatch.stopping import (
    Aggregation,
    DeerConfig,
    EquivalenceChecker,
    KStableVerifier,
    make_deer_probe,
    make_eat_probe,
)
from tracewatch.taskgen import TaskInstance, TaskKind, maze_grid_of, spatial_store_of
from tracewatch.trace import ReasoningTrace
from tracewatch.verifiers.game24 import Game24Verifier, verify_game24
from tracewatch.verifiers.maze import MazeStepVerifier
from tracewatch.verifiers.spatial import SpatialVerifier

NO_ANSWER = "NO_ANSWER"
MONITORED_METHODS = ("cot", "kstable", "eat", "deer", "stepverify")


@dataclass
class MethodParams:
    """Knobs for the monitored methods (the sweepable dimensions live here)."""

    k: int = 2
    eat_threshold: float = 0.008
    eat_alpha: float = 0.3
    deer_threshold: float = 0.95
    deer_aggregation: Aggregation = Aggregation.GEOMETRIC_MEAN
    max_interventions: int = 3
    answer_phrases: tuple[str, ...] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MethodParams:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != "extra"}
        if "deer_aggregation" in known:
            known["deer_aggregation"] = Aggregation(known["deer_aggregation"])
        if known.get("answer_phrases") is not None:
            known["answer_phrases"] = tuple(known["answer_phrases"])
        return cls(**known, extra={k: v for k, v in d.items() if k not in cls.__dataclass_fields__})


def answer_extractor(instance: TaskInstance, params: MethodParams | None = None) -> AnswerExtractor:
    kw: dict[str, Any] = {"options": tuple(instance.options)}
    if params is not None and params.answer_phrases:
        kw["phrases"] = params.answer_phrases
    return AnswerExtractor(**kw)


def proposal_extractor(instance: TaskInstance, params: MethodParams | None = None):
    """The extractor whose payloads are candidate final answers."""
    if instance.kind is TaskKind.GAME24:
        return EquationExtractor(tuple(instance.payload["numbers"]))
    return answer_extractor(instance, params)


def external_binding(instance: TaskInstance, max_interventions: int = 3) -> VerifierBinding:
    if instance.kind is TaskKind.MAZE:
        grid = maze_grid_of(instance)
        return VerifierBinding.external(
            "maze", MazeExtractor(), lambda: MazeStepVerifier(grid), max_interventions=max_interventions,
            verifier_id="maze-grid",
        )
    if instance.kind is TaskKind.SPATIALMAP:
        store = spatial_store_of(instance)
        return VerifierBinding.external(
            "spatial", SpatialExtractor(), lambda: SpatialVerifier(store.copy()), max_interventions=max_interventions,
            verifier_id="spatial-relations",
        )
    nums = tuple(instance.payload["numbers"])
    return VerifierBinding.external(
        "game24", EquationExtractor(nums), lambda: Game24Verifier(nums), max_interventions=max_interventions,
        verifier_id="game24-exact",
    )


def bindings_for(
    instance: TaskInstance, method: str, params: MethodParams | None = None
) -> tuple[list[VerifierBinding], list[ProbeBinding]]:
    params = params or MethodParams()
    if method == "cot":
        return [], []
    if method == "kstable":
        checker = EquivalenceChecker()
        binding = VerifierBinding.stopping(
            "kstable", proposal_extractor(instance, params), lambda: KStableVerifier(params.k, checker),
            verifier_id=f"kstable-{params.k}",
        )
        return [binding], []
    if method == "eat":
        return [], [ProbeBinding("eat", make_eat_probe(params.eat_threshold, params.eat_alpha))]
    if method == "deer":
        cfg = DeerConfig(params.deer_threshold, aggregation=params.deer_aggregation)
        return [], [ProbeBinding("deer", make_deer_probe(cfg))]
    if method == "stepverify":
        return [external_binding(instance, params.max_interventions)], []
    raise ValueError(f"unknown monitored method {method!r}")


def final_answer(instance: TaskInstance, trace: ReasoningTrace | str) -> str:
    """Latest answer proposal that stands in the trace, or NO_ANSWER.

    For a plain string every proposal stands; for a trace, proposals
    retracted by feedback and text inside injections are ignored.
    """
    extractor = proposal_extractor(instance)
    if isinstance(trace, str):
        states, _ = extractor.scan(trace, 0, final=True)
    else:
        states = emitted_states(trace, extractor)
    return states[-1].payload if states else NO_ANSWER


def judge_correct(instance: TaskInstance, answer: str | None) -> bool:
    if answer is None or answer == NO_ANSWER:
        return instance.kind is TaskKind.GAME24 and not instance.gold["solvable"]
    if instance.kind is TaskKind.GAME24:
        return bool(instance.gold["solvable"]) and verify_game24(answer, instance.payload["numbers"]).passed
    return answer == instance.gold
