"""Command line: ``tracewatch gen|run|verify|report|sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from tracewatch.backends import BackendError
from tracewatch.harness import (
    SWEEP_METHOD,
    ExperimentConfig,
    IdMismatch,
    aggregate,
    load_log,
    render_report,
    run_experiment,
    sweep,
)
from tracewatch.taskgen import TaskInstance, TaskKind, generate, load_instances, save_instances
from tracewatch.tasks import external_binding
from tracewatch.trace import ReasoningTrace
from tracewatch.verifiers.maze import parse_maze


def _cmd_gen(args: argparse.Namespace) -> int:
    kw = {}
    if args.kind is TaskKind.MAZE:
        kw = {"height": args.height, "width": args.width}
    elif args.kind is TaskKind.SPATIALMAP:
        kw = {"n_objects": args.n_objects}
    else:
        kw = {"solvable": not args.unsolvable}
    instances = generate(args.kind, args.n, args.seed, **kw)
    save_instances(instances, args.out)
    print(f"wrote {len(instances)} {args.kind.value} instances to {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    if args.instances:
        config.instances = args.instances
    if args.workers:
        config.workers = args.workers
    records = run_experiment(config, log_path=args.log)
    n_ok = sum(r.correct for r in records)
    failed = sum(r.status == "FAILED" for r in records)
    print(f"{len(records)} records in {args.log}: {n_ok} correct, {failed} failed")
    return 0


def _instance_for_verify(args: argparse.Namespace) -> TaskInstance:
    if args.instances:
        insts = {i.id: i for i in load_instances(args.instances)}
        if args.id not in insts:
            raise SystemExit(f"instance {args.id!r} not found in {args.instances}")
        return insts[args.id]
    if args.kind is TaskKind.MAZE and args.maze:
        ascii_map = Path(args.maze).read_text(encoding="utf-8")
        parse_maze(ascii_map)
        return TaskInstance("cli", TaskKind.MAZE, {"ascii": ascii_map}, "right_turns", "", [], "A", 0)
    if args.kind is TaskKind.GAME24 and args.numbers:
        return TaskInstance("cli", TaskKind.GAME24, {"numbers": args.numbers}, "make24", "", [], {"solvable": True}, 0)
    raise SystemExit("give --instances and --id, or --maze (maze) / --numbers (game24)")


def _cmd_verify(args: argparse.Namespace) -> int:
    instance = _instance_for_verify(args)
    if instance.kind is not args.kind:
        raise SystemExit(f"instance {instance.id} is {instance.kind.value}, not {args.kind.value}")
    raw = Path(args.trace_file).read_text(encoding="utf-8")
    if args.trace_file.endswith(".json"):
        data = json.loads(raw)
        trace = ReasoningTrace.from_dict(data.get("trace", data))
    else:
        trace = ReasoningTrace(prompt="")
        trace.append_model(raw)
    binding = external_binding(instance)
    verifier = binding.verifier_factory()
    failures = 0
    text = trace.text
    for ex in binding.extractors:
        states, _ = ex.scan(text, 0, final=True)
        for st in states:
            v = verifier.verify(st)
            failures += not v.passed
            mark = "PASS" if v.passed else "FAIL"
            first = st.text.strip().splitlines()[0] if st.text.strip() else ""
            print(f"{mark} {st.kind.value:<22} {st.span[0]:>6}-{st.span[1]:<6} {first[:70]}")
            if not v.passed and v.feedback:
                print(f"     {v.feedback}")
            if not v.passed and args.stop_on_fail:
                return 1
    print(f"{failures} failing state(s)")
    return 1 if failures else 0


def _cmd_report(args: argparse.Namespace) -> int:
    baseline = load_log(args.baseline_log)
    rows = []
    try:
        for path in args.log:
            rows.append(aggregate(load_log(path), baseline))
    except IdMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(render_report(rows))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    if args.instances:
        config.instances = args.instances
    values = [float(v) for v in args.values.split(",")] if args.values else None
    result = sweep(config, args.dimension, values, log_dir=args.log_dir)
    print(result.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracewatch", description="Verify and steer reasoning traces while they stream.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate task instances")
    p.add_argument("--kind", type=TaskKind, required=True, help="maze, spatialmap or game24")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=9)
    p.add_argument("--width", type=int, default=9)
    p.add_argument("--n-objects", type=int, default=5)
    p.add_argument("--unsolvable", action="store_true", help="game24: sample unsolvable tuples")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("run", help="run one method over an instance file")
    p.add_argument("--config", required=True)
    p.add_argument("--instances")
    p.add_argument("--log", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="check every state of a trace file")
    p.add_argument("--kind", type=TaskKind, required=True)
    p.add_argument("--trace-file", required=True, help="plain text, or a trace / run-record JSON")
    p.add_argument("--instances")
    p.add_argument("--id")
    p.add_argument("--maze", help="maze: ASCII map file")
    p.add_argument("--numbers", type=int, nargs=4, help="game24: the four inputs")
    p.add_argument("--stop-on-fail", action="store_true")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="accuracy / token / soundness table")
    p.add_argument("--log", required=True, nargs="+")
    p.add_argument("--baseline-log", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("sweep", help="sweep one early-stopping parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--dimension", required=True, choices=sorted(SWEEP_METHOD))
    p.add_argument("--values", help="comma separated; defaults per dimension")
    p.add_argument("--instances")
    p.add_argument("--log-dir")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
