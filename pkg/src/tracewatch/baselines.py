"""Comparison methods on the same backends: best-of-K, majority vote, generate-test, Tree-of-Thoughts.

Token totals count every generated token of every candidate, iteration and
branch, including judge and value-prompt calls.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from tracewatch.backends import BackendConfig, BackendError, GenerationParams, open_session
from tracewatch.monitor import MonitorLimits, RunStatus, playback, reverify_trace
from tracewatch.taskgen import TaskInstance, TaskKind, render_metaprompt
from tracewatch.tasks import NO_ANSWER, external_binding, final_answer, judge_correct
from tracewatch.trace import ReasoningTrace, Verdict
from tracewatch.verifiers.game24 import verify_game24


@dataclass
class Candidate:
    text: str
    answer: str
    tokens: int
    seed: int | None = None
    failed: bool = False


def generate_candidate(
    backend: BackendConfig, prompt: str, params: GenerationParams, instance: TaskInstance | None = None,
    limits: MonitorLimits | None = None,
) -> Candidate:
    try:
        session = open_session(backend, params, prompt)
    except BackendError:
        return Candidate("", NO_ANSWER, 0, params.seed, failed=True)
    out = playback(session, limits)
    session.close()
    text = out.trace.text
    answer = final_answer(instance, text) if instance is not None else text
    return Candidate(text, answer, out.tokens_consumed, params.seed, failed=out.status is RunStatus.FAILED)


# ---------------------------------------------------------------------------
# critics

class CriticKind(str, enum.Enum):
    LLM_JUDGE = "LLM_JUDGE"
    VERIFIER_SCORE = "VERIFIER_SCORE"
    GOLD_ORACLE = "GOLD_ORACLE"


class Critic(Protocol):
    kind: CriticKind
    tokens_used: int

    def score(self, instance: TaskInstance, candidate: Candidate) -> float: ...


@dataclass
class GoldOracle:
    kind: CriticKind = CriticKind.GOLD_ORACLE
    tokens_used: int = 0

    def score(self, instance: TaskInstance, candidate: Candidate) -> float:
        return 1.0 if judge_correct(instance, candidate.answer) else 0.0


def verify_candidate(instance: TaskInstance, candidate: Candidate) -> Verdict:
    """Verdict on a complete candidate: its answer and every structured state it contains."""
    if candidate.answer == NO_ANSWER:
        return Verdict(False, "no final answer was given.")
    if instance.kind is TaskKind.GAME24:
        return verify_game24(candidate.answer, instance.payload["numbers"])
    trace = ReasoningTrace(prompt="")
    trace.append_model(candidate.text)
    failures = reverify_trace(trace, [external_binding(instance)])
    if failures:
        return Verdict(False, failures[0].feedback)
    return Verdict(True)


@dataclass
class VerifierScore:
    """1 when the candidate passes the task verifier, otherwise 0."""

    kind: CriticKind = CriticKind.VERIFIER_SCORE
    tokens_used: int = 0

    def score(self, instance: TaskInstance, candidate: Candidate) -> float:
        return 1.0 if verify_candidate(instance, candidate).passed else 0.0


_SCORE_RE = re.compile(r"(-?\d+(?:\.\d+)?)")


@dataclass
class LlmJudge:
    """Asks a model for a 0-10 score of the full trace."""

    backend: BackendConfig
    params: GenerationParams = field(default_factory=lambda: GenerationParams(temperature=0.0, max_tokens=64))
    template: str = (
        "Here is a question and a proposed solution.\n\nQuestion:\n{question}\n\nSolution:\n{solution}\n\n"
        "Rate how likely the solution is correct on a scale from 0 to 10. Reply with the number only."
    )
    kind: CriticKind = CriticKind.LLM_JUDGE
    tokens_used: int = 0

    def score(self, instance: TaskInstance, candidate: Candidate) -> float:
        prompt = self.template.format(question=instance.question, solution=candidate.text)
        reply = generate_candidate(self.backend, prompt, self.params)
        self.tokens_used += reply.tokens
        m = _SCORE_RE.search(reply.text)
        return min(max(float(m.group(1)) / 10.0, 0.0), 1.0) if m else 0.0


# ---------------------------------------------------------------------------
# sampling baselines

@dataclass
class SearchResult:
    answer: str
    text: str
    total_tokens: int
    candidates: list[Candidate] = field(default_factory=list)
    status: RunStatus = RunStatus.COMPLETED
    verified: bool | None = None
    iterations: int = 0


def _sample(backend: BackendConfig, instance: TaskInstance, prompt: str, params: GenerationParams, k: int,
            base_seed: int, workers: int) -> list[Candidate]:
    seeds = [base_seed + i for i in range(k)]
    run = lambda s: generate_candidate(backend, prompt, params.with_seed(s), instance)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, seeds))
    return [run(s) for s in seeds]


def best_of_k(
    backend: BackendConfig, instance: TaskInstance, k: int, critic: Critic, *, params: GenerationParams | None = None,
    base_seed: int = 0, method: str = "cot", workers: int = 1,
) -> SearchResult:
    if k < 1:
        raise ValueError("K must be at least 1")
    params = params or GenerationParams()
    cands = _sample(backend, instance, render_metaprompt(instance, method), params, k, base_seed, workers)
    total = sum(c.tokens for c in cands)
    alive = [c for c in cands if not c.failed]
    if not alive:
        return SearchResult(NO_ANSWER, "", total, cands, RunStatus.FAILED)
    before = critic.tokens_used
    scores = [critic.score(instance, c) for c in alive]
    best = alive[max(range(len(alive)), key=lambda i: (scores[i], -i))]
    return SearchResult(best.answer, best.text, total + critic.tokens_used - before, cands)


def majority_vote(candidates: Sequence[Candidate], critic: Critic | None = None,
                  instance: TaskInstance | None = None) -> str:
    """Most frequent extracted answer; ties go to the best-scored candidate among the tied answers."""
    if not candidates:
        raise ValueError("majority vote needs at least one candidate")
    votes = Counter(c.answer for c in candidates if c.answer != NO_ANSWER and not c.failed)
    if not votes:
        return NO_ANSWER
    top = max(votes.values())
    tied = [a for a, n in votes.items() if n == top]
    if len(tied) == 1 or critic is None:
        return tied[0]
    best_answer, best_score = tied[0], float("-inf")
    for c in candidates:
        if c.answer in tied:
            s = critic.score(instance, c)
            if s > best_score:
                best_answer, best_score = c.answer, s
    return best_answer


def majority_of_k(
    backend: BackendConfig, instance: TaskInstance, k: int, critic: Critic | None = None, *,
    params: GenerationParams | None = None, base_seed: int = 0, method: str = "cot", workers: int = 1,
) -> SearchResult:
    params = params or GenerationParams()
    cands = _sample(backend, instance, render_metaprompt(instance, method), params, k, base_seed, workers)
    before = critic.tokens_used if critic else 0
    answer = majority_vote(cands, critic, instance)
    total = sum(c.tokens for c in cands) + ((critic.tokens_used - before) if critic else 0)
    text = next((c.text for c in cands if c.answer == answer), "")
    status = RunStatus.FAILED if all(c.failed for c in cands) else RunStatus.COMPLETED
    return SearchResult(answer, text, total, cands, status)


RETRY_NOTE = "\n\nAn earlier attempt was checked and rejected: {feedback}\nSolve the problem again from the start."


def generate_test_loop(
    backend: BackendConfig, instance: TaskInstance, check: Callable[[TaskInstance, Candidate], Verdict] = verify_candidate,
    max_iters: int = 3, *, params: GenerationParams | None = None, method: str = "generate_test", base_seed: int = 0,
) -> SearchResult:
    """Generate a full solution, verify it, and retry with the feedback until it passes."""
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    params = params or GenerationParams()
    base_prompt = prompt = render_metaprompt(instance, method)
    cands: list[Candidate] = []
    for it in range(max_iters):
        cand = generate_candidate(backend, prompt, params.with_seed(base_seed + it), instance)
        cands.append(cand)
        verdict = check(instance, cand)
        if verdict.passed:
            return SearchResult(cand.answer, cand.text, sum(c.tokens for c in cands), cands, verified=True,
                                iterations=it + 1)
        prompt = base_prompt + RETRY_NOTE.format(feedback=verdict.feedback or "it was incorrect.")
    last = cands[-1]
    return SearchResult(last.answer, last.text, sum(c.tokens for c in cands), cands, verified=False,
                        iterations=max_iters)


# ---------------------------------------------------------------------------
# Tree of Thoughts

class Valuer(str, enum.Enum):
    VALUE_PROMPT = "VALUE_PROMPT"
    STEP_VERIFIER = "STEP_VERIFIER"


DEFAULT_VALUE_MAP = {"likely": 1.0, "unlikely": 0.1, "impossible": 0.0}


@dataclass(frozen=True)
class ToTConfig:
    beam_width: int = 2
    max_depth: int = 8
    proposals_per_node: int = 2
    value_map: tuple[tuple[str, float], ...] = tuple(DEFAULT_VALUE_MAP.items())
    early_stop: bool = True

    def __post_init__(self) -> None:
        if self.beam_width < 1 or self.max_depth < 1 or self.proposals_per_node < 1:
            raise ValueError("beam_width, max_depth and proposals_per_node must be positive")


class ToTTask(Protocol):
    """Task adapter for tree search over partial solutions (lists of step strings)."""

    def propose_prompt(self, path: Sequence[str]) -> str: ...

    def parse_proposals(self, text: str) -> list[str]: ...

    def value_prompt(self, path: Sequence[str]) -> str: ...

    def step_verify(self, path: Sequence[str]) -> bool: ...

    def is_terminal(self, path: Sequence[str]) -> bool: ...

    def answer(self, path: Sequence[str]) -> str: ...


@dataclass
class ToTResult:
    answer: str
    path: list[str]
    score: float
    total_tokens: int
    max_active_branches: int
    max_depth_reached: int
    status: RunStatus
    nodes_expanded: int = 0


def parse_value(text: str, value_map: dict[str, float]) -> float:
    """Last category word in the reply; unknown replies count as impossible."""
    words = re.findall(r"[a-z]+", text.lower())
    for w in reversed(words):
        if w in value_map:
            return value_map[w]
    return 0.0


def tot_search(
    backend: BackendConfig, task: ToTTask, config: ToTConfig = ToTConfig(), valuer: Valuer = Valuer.VALUE_PROMPT, *,
    params: GenerationParams | None = None, base_seed: int = 0,
) -> ToTResult:
    """Beam search over proposer expansions.

    Children scored 0 (impossible / failing the step verifier) are pruned.
    Terminal children are collected rather than expanded; the best one wins.
    With ``early_stop`` the search ends at the first depth that yields a
    terminal child with the top score.
    """
    params = params or GenerationParams()
    vmap = dict(config.value_map)
    top_value = max(vmap.values()) if valuer is Valuer.VALUE_PROMPT else 1.0
    tokens = 0
    seed = base_seed
    frontier: list[list[str]] = [[]]
    terminals: list[tuple[float, int, list[str]]] = []
    max_active = max_depth = expanded = 0
    for depth in range(1, config.max_depth + 1):
        children: list[list[str]] = []
        for node in frontier:
            cand = generate_candidate(backend, task.propose_prompt(node), params.with_seed(seed))
            seed += 1
            tokens += cand.tokens
            expanded += 1
            for step in task.parse_proposals(cand.text)[: config.proposals_per_node]:
                children.append([*node, step])
        max_active = max(max_active, len(children))
        scored: list[tuple[float, int, list[str]]] = []
        for child in children:
            if valuer is Valuer.VALUE_PROMPT:
                reply = generate_candidate(backend, task.value_prompt(child), params.with_seed(seed))
                seed += 1
                tokens += reply.tokens
                score = parse_value(reply.text, vmap)
            else:
                score = 1.0 if task.step_verify(child) else 0.0
            if score > 0:
                # deeper verified context breaks ties between equal scores
                scored.append((score, len(child), child))
        if not scored:
            break
        max_depth = depth
        scored.sort(key=lambda t: (-t[0], -t[1]))
        done = [t for t in scored if task.is_terminal(t[2])]
        terminals.extend(done)
        if config.early_stop and any(t[0] >= top_value for t in done):
            break
        frontier = [t[2] for t in scored if not task.is_terminal(t[2])][: config.beam_width]
        if not frontier:
            break
    if terminals:
        best = max(terminals, key=lambda t: t[0])  # max keeps the first of equal scores
        return ToTResult(task.answer(best[2]), best[2], best[0], tokens, max_active, max_depth, RunStatus.COMPLETED,
                         expanded)
    if max_depth == 0:
        return ToTResult(NO_ANSWER, [], 0.0, tokens, max_active, 0, RunStatus.FAILED, expanded)
    best_path = frontier[0] if frontier else []
    return ToTResult(NO_ANSWER, best_path, 0.0, tokens, max_active, max_depth, RunStatus.TRUNCATED, expanded)
