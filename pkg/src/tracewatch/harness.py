"""Experiment runner, metrics, sweeps and report tables.

Run logs are JSONL files with one :class:`RunRecord` per line. A rerun
against an existing log only executes the instances it does not list yet.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from tracewatch.backends import BackendConfig, ConfigurationError, GenerationParams, PRESETS, open_session
from tracewatch.baselines import (
    GoldOracle,
    LlmJudge,
    ToTConfig,
    Valuer,
    VerifierScore,
    best_of_k,
    generate_test_loop,
    majority_of_k,
    tot_search,
)
from tracewatch.monitor import MonitorLimits, RunStatus, reverify_trace, run_monitored_generation
from tracewatch.taskgen import TaskInstance, load_instances, render_metaprompt
from tracewatch.tasks import (
    MONITORED_METHODS,
    NO_ANSWER,
    MethodParams,
    bindings_for,
    external_binding,
    final_answer,
    judge_correct,
)
from tracewatch.tot_tasks import tot_task_for
from tracewatch.trace import ReasoningTrace

log = logging.getLogger(__name__)

SAMPLING_METHODS = ("bestofk", "majority")
TOT_METHODS = ("tot", "tot_value", "tot_verifier")
ALL_METHODS = (*MONITORED_METHODS, *SAMPLING_METHODS, "generate_test", *TOT_METHODS)

SWEEP_DEFAULTS: dict[str, tuple[float, ...]] = {
    "k": (2, 3, 4, 5, 6, 7, 10, 15, 100),
    "eat_threshold": (0.2, 0.1, 0.04, 0.008, 0.005, 0.003, 0.001, 1e-4),
    "deer_threshold": (0.85, 0.9, 0.93, 0.95, 0.97, 0.98, 0.99, 0.995),
}
SWEEP_METHOD = {"k": "kstable", "eat_threshold": "eat", "deer_threshold": "deer"}


@dataclass
class ExperimentConfig:
    """Everything one run of one method over an instance set needs.

    JSON keys mirror the field names. ``backend`` takes the keys of
    :class:`BackendConfig`; for the mock backend ``scripts_dir`` points at a
    directory holding one ``{instance_id}.json`` script per instance.
    ``params`` overrides generation parameters on top of ``preset``.
    """

    method: str = "cot"
    instances: str | None = None
    backend: dict[str, Any] = field(default_factory=lambda: {"kind": "mock"})
    scripts_dir: str | None = None
    preset: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    method_params: dict[str, Any] = field(default_factory=dict)
    limits: dict[str, Any] = field(default_factory=dict)
    workers: int = 1
    seed: int = 0
    k: int = 4
    critic: str = "gold"
    max_iters: int = 3
    tot: dict[str, Any] = field(default_factory=dict)
    keep_traces: bool = True

    def __post_init__(self) -> None:
        if self.method not in ALL_METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {', '.join(ALL_METHODS)}")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        return cls.from_dict(json.loads(p.read_text(encoding="utf-8")))

    def generation_params(self) -> GenerationParams:
        base = PRESETS[self.preset] if self.preset else GenerationParams()
        return replace(base, **self.params) if self.params else base

    def backend_for(self, instance: TaskInstance) -> BackendConfig:
        cfg = BackendConfig.from_dict(self.backend)
        if cfg.kind == "mock" and cfg.script is None and not cfg.script_path:
            if not self.scripts_dir:
                raise ConfigurationError("mock backend needs scripts_dir, script or script_path")
            cfg.script_path = str(Path(self.scripts_dir) / f"{instance.id}.json")
        return cfg


@dataclass
class RunRecord:
    instance_id: str
    method: str
    final_answer: str
    correct: bool
    model_tokens: int
    injected_tokens: int = 0
    interventions: list[dict[str, Any]] = field(default_factory=list)
    sound: bool | None = None
    wall_ms: float = 0.0
    seed: int | None = None
    status: str = RunStatus.COMPLETED.value
    abstained: bool = False
    discarded_tokens: int = 0
    error: str | None = None
    trace: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunRecord:
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# running

def _critic(config: ExperimentConfig):
    if config.critic == "gold":
        return GoldOracle()
    if config.critic == "verifier":
        return VerifierScore()
    if config.critic == "judge":
        return LlmJudge(BackendConfig.from_dict(config.backend))
    raise ConfigurationError(f"unknown critic {config.critic!r}")


def _run_monitored(config: ExperimentConfig, instance: TaskInstance, mp: MethodParams) -> RunRecord:
    params = config.generation_params().with_seed(config.seed)
    session = open_session(config.backend_for(instance), params, render_metaprompt(instance, config.method))
    bindings, probes = bindings_for(instance, config.method, mp)
    limits = MonitorLimits(**config.limits) if config.limits else MonitorLimits(max_total_tokens=params.max_tokens)
    try:
        out = run_monitored_generation(session, bindings, limits, probes=probes)
    finally:
        session.close()
    trace = out.trace
    emitted = out.status in (RunStatus.COMPLETED, RunStatus.TRUNCATED) and not out.abstained
    answer = final_answer(instance, trace) if emitted else NO_ANSWER
    sound = None
    if config.method == "stepverify":
        sound = not reverify_trace(trace, [external_binding(instance, mp.max_interventions)])
    return RunRecord(
        instance_id=instance.id,
        method=config.method,
        final_answer=answer,
        correct=emitted and judge_correct(instance, answer),
        model_tokens=trace.reasoning_tokens,
        injected_tokens=trace.injected_tokens,
        interventions=[
            {"span": list(e.span), "feedback": e.feedback, "action": e.action.value} for e in out.interventions
        ],
        sound=sound,
        seed=config.seed,
        status=out.status.value,
        abstained=out.abstained,
        discarded_tokens=trace.discarded_tokens,
        error=out.error,
        trace=trace.to_dict() if config.keep_traces else None,
    )


def _run_search(config: ExperimentConfig, instance: TaskInstance) -> RunRecord:
    backend = config.backend_for(instance)
    params = config.generation_params()
    m = config.method
    sound = None
    if m == "bestofk":
        res = best_of_k(backend, instance, config.k, _critic(config), params=params, base_seed=config.seed,
                        workers=config.workers)
        status, answer, tokens, text = res.status, res.answer, res.total_tokens, res.text
    elif m == "majority":
        res = majority_of_k(backend, instance, config.k, _critic(config), params=params, base_seed=config.seed)
        status, answer, tokens, text = res.status, res.answer, res.total_tokens, res.text
    elif m == "generate_test":
        res = generate_test_loop(backend, instance, max_iters=config.max_iters, params=params, base_seed=config.seed)
        status, answer, tokens, text = res.status, res.answer, res.total_tokens, res.text
        sound = bool(res.verified)
    else:
        valuer = Valuer.STEP_VERIFIER if m == "tot_verifier" else Valuer.VALUE_PROMPT
        cfg = ToTConfig(**config.tot)
        tres = tot_search(backend, tot_task_for(instance), cfg, valuer, params=params, base_seed=config.seed)
        status, answer, tokens, text = tres.status, tres.answer, tres.total_tokens, "".join(tres.path)
    trace = ReasoningTrace(render_metaprompt(instance, m))
    if text:
        trace.append_model(text)
    return RunRecord(
        instance_id=instance.id,
        method=m,
        final_answer=answer,
        correct=status is not RunStatus.FAILED and judge_correct(instance, answer),
        model_tokens=tokens,
        sound=sound,
        seed=config.seed,
        status=status.value,
        trace=trace.to_dict() if config.keep_traces else None,
    )


def run_instance(config: ExperimentConfig, instance: TaskInstance) -> RunRecord:
    """One record for one instance; failures become FAILED records instead of exceptions."""
    started = time.perf_counter()
    try:
        if config.method in MONITORED_METHODS:
            rec = _run_monitored(config, instance, MethodParams.from_dict(config.method_params))
        else:
            rec = _run_search(config, instance)
    except Exception as exc:  # one bad instance must not abort the batch
        log.warning("instance %s failed: %s", instance.id, exc)
        rec = RunRecord(instance.id, config.method, NO_ANSWER, False, 0, seed=config.seed,
                        status=RunStatus.FAILED.value, error=f"{type(exc).__name__}: {exc}")
    rec.wall_ms = (time.perf_counter() - started) * 1000.0
    return rec


def load_log(path: str | Path) -> list[RunRecord]:
    p = Path(path)
    if not p.is_file():
        return []
    out = []
    for line in p.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(RunRecord.from_dict(json.loads(line)))
    return out


def run_experiment(
    config: ExperimentConfig, instances: Sequence[TaskInstance] | None = None, log_path: str | Path | None = None
) -> list[RunRecord]:
    """Run every instance not yet in ``log_path``; returns all records of the log, ordered like ``instances``."""
    if instances is None:
        if not config.instances:
            raise ConfigurationError("no instances given")
        instances = load_instances(config.instances)
    existing = {r.instance_id: r for r in load_log(log_path)} if log_path else {}
    todo = [inst for inst in instances if inst.id not in existing]
    lock = threading.Lock()
    fresh: dict[str, RunRecord] = {}
    handle = open(log_path, "a", encoding="utf-8") if log_path else None

    def work(inst: TaskInstance) -> None:
        rec = run_instance(config, inst)
        with lock:
            fresh[inst.id] = rec
            if handle:
                handle.write(json.dumps(rec.to_dict()) + "\n")
                handle.flush()

    try:
        workers = config.workers if config.method not in SAMPLING_METHODS else 1
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                list(pool.map(work, todo))
        else:
            for inst in todo:
                work(inst)
    finally:
        if handle:
            handle.close()
    merged = {**existing, **fresh}
    return [merged[inst.id] for inst in instances if inst.id in merged]


# ---------------------------------------------------------------------------
# aggregation

class IdMismatch(ValueError):
    def __init__(self, missing_in_run: set[str], missing_in_baseline: set[str]) -> None:
        self.difference = missing_in_run | missing_in_baseline
        super().__init__(
            f"run and baseline cover different instances; only in baseline: {sorted(missing_in_run)}, "
            f"only in run: {sorted(missing_in_baseline)}"
        )


@dataclass(frozen=True)
class ReportRow:
    method: str
    accuracy_pct: float
    tokens_pct: float
    soundness_pct: float | None
    n: int
    abstained: int = 0


def _by_id(records: Iterable[RunRecord]) -> dict[str, RunRecord]:
    out: dict[str, RunRecord] = {}
    for r in records:
        if r.instance_id in out:
            raise ValueError(f"duplicate record for instance {r.instance_id}")
        out[r.instance_id] = r
    return out


def aggregate(run_log: Sequence[RunRecord] | str | Path, baseline_log: Sequence[RunRecord] | str | Path) -> ReportRow:
    """Accuracy, token percentage of the baseline, and soundness for one method's log."""
    run = _by_id(load_log(run_log) if isinstance(run_log, (str, Path)) else run_log)
    base = _by_id(load_log(baseline_log) if isinstance(baseline_log, (str, Path)) else baseline_log)
    if set(run) != set(base):
        raise IdMismatch(set(base) - set(run), set(run) - set(base))
    if not run:
        raise ValueError("empty log")
    n = len(run)
    base_tokens = sum(r.model_tokens for r in base.values())
    run_tokens = sum(r.model_tokens for r in run.values())
    judged = [r for r in run.values() if r.sound is not None and not r.abstained]
    soundness = 100.0 * sum(r.sound for r in judged) / len(judged) if judged else None
    methods = sorted({r.method for r in run.values()})
    return ReportRow(
        method="+".join(methods),
        accuracy_pct=100.0 * sum(r.correct for r in run.values()) / n,
        tokens_pct=100.0 * run_tokens / base_tokens if base_tokens else float("nan"),
        soundness_pct=soundness,
        n=n,
        abstained=sum(r.abstained for r in run.values()),
    )


def render_report(rows: Sequence[ReportRow]) -> str:
    lines = [f"{'Method':<16} {'Accuracy %':>10} {'Tokens %':>9} {'Soundness %':>11} {'n':>5}"]
    for r in rows:
        snd = f"{r.soundness_pct:.2f}" if r.soundness_pct is not None else "-"
        lines.append(f"{r.method:<16} {r.accuracy_pct:>10.2f} {r.tokens_pct:>9.2f} {snd:>11} {r.n:>5}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepResult:
    dimension: str
    baseline: ReportRow
    rows: list[tuple[float, ReportRow]]
    selected: float | None
    flags: list[str] = field(default_factory=list)

    def table(self) -> str:
        lines = [f"{'Value':>8} {'Acc.':>7} {'Tokens':>8} {'%Red':>7}"]
        for value, row in self.rows:
            mark = " *" if value == self.selected else ""
            lines.append(f"{value:>8g} {row.accuracy_pct:>7.2f} {row.tokens_pct:>8.2f} {100 - row.tokens_pct:>7.2f}{mark}")
        lines.append(f"baseline accuracy {self.baseline.accuracy_pct:.2f}")
        if self.selected is not None:
            lines.append(f"selected {self.dimension} = {self.selected:g}")
        lines.extend(f"note: {f}" for f in self.flags)
        return "\n".join(lines)


def select_value(baseline: ReportRow, rows: Sequence[tuple[float, ReportRow]]) -> tuple[float | None, list[str]]:
    """Largest token reduction among values whose accuracy is at least the baseline's.

    Ties go to the earliest value in sweep order and are flagged. When no
    value keeps the accuracy the selection is None (keep the baseline).
    """
    ok = [(v, r) for v, r in rows if r.accuracy_pct >= baseline.accuracy_pct - 1e-9]
    if not ok:
        return None, ["no value maintains baseline accuracy; keep the baseline"]
    best = min(r.tokens_pct for _, r in ok)
    winners = [v for v, r in ok if abs(r.tokens_pct - best) <= 1e-9]
    flags = [f"tie between {', '.join(f'{w:g}' for w in winners)}; first taken"] if len(winners) > 1 else []
    return winners[0], flags


def sweep(
    config: ExperimentConfig,
    dimension: str,
    values: Sequence[float] | None = None,
    instances: Sequence[TaskInstance] | None = None,
    *,
    baseline: Sequence[RunRecord] | None = None,
    log_dir: str | Path | None = None,
) -> SweepResult:
    """Run the matching early-stopping method once per value and pick the best one."""
    if dimension not in SWEEP_METHOD:
        raise ConfigurationError(f"cannot sweep {dimension!r}; choose from {', '.join(SWEEP_METHOD)}")
    values = list(values if values is not None else SWEEP_DEFAULTS[dimension])
    if not values:
        raise ValueError("sweep needs at least one value")
    if instances is None:
        instances = load_instances(config.instances)

    def log_for(tag: str) -> Path | None:
        if log_dir is None:
            return None
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        return Path(log_dir) / f"{tag}.jsonl"

    if baseline is None:
        baseline = run_experiment(replace(config, method="cot"), instances, log_for("cot"))
    rows = []
    for v in values:
        value = int(v) if dimension == "k" else float(v)
        cfg = replace(config, method=SWEEP_METHOD[dimension], method_params={**config.method_params, dimension: value})
        recs = run_experiment(cfg, instances, log_for(f"{dimension}={value:g}"))
        rows.append((value, aggregate(recs, baseline)))
    base_row = aggregate(baseline, baseline)
    selected, flags = select_value(base_row, rows)
    return SweepResult(dimension, base_row, rows, selected, flags)
