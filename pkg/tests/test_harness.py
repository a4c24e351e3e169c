from __future__ import annotations

import json

import pytest

from tracewatch.backends import ConfigurationError
from tracewatch.harness import (
    ExperimentConfig,
    IdMismatch,
    ReportRow,
    RunRecord,
    aggregate,
    load_log,
    render_report,
    run_experiment,
    run_instance,
    select_value,
    sweep,
)
from tracewatch.mocksuite import kstable_sweep_suite, sample_pool, step_verifier_suite, write_scripts
from tracewatch.taskgen import generate, save_instances


@pytest.fixture
def suite(tmp_path):
    insts = generate("maze", 3, 0) + generate("spatialmap", 3, 0) + generate("game24", 2, 0)
    scripts = step_verifier_suite(insts, error_rate=0.6, stubborn_rate=0.15, seed=1)
    write_scripts(scripts, tmp_path / "scripts")
    save_instances(insts, tmp_path / "inst.json")
    return insts, tmp_path


def config(tmp_path, method, **kw):
    return ExperimentConfig(method=method, instances=str(tmp_path / "inst.json"), scripts_dir=str(tmp_path / "scripts"), **kw)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(method="magic")
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"method": "cot", "bogus": 1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(tmp_path / "none.json")
    cfg = ExperimentConfig(preset="phi4", params={"temperature": 0.0})
    assert cfg.generation_params().top_k == 50 and cfg.generation_params().temperature == 0.0


def test_stepverify_records_are_sound(suite):
    insts, tmp = suite
    records = run_experiment(config(tmp, "stepverify"), log_path=tmp / "sv.jsonl")
    assert [r.instance_id for r in records] == [i.id for i in insts]
    for r in records:
        assert r.status in ("COMPLETED", "HALTED")
        if r.abstained:
            assert r.final_answer == "NO_ANSWER" and not r.correct
        else:
            assert r.sound is True and r.correct
    assert any(r.injected_tokens for r in records)


def test_log_is_resumable(suite):
    insts, tmp = suite
    log = tmp / "cot.jsonl"
    run_experiment(config(tmp, "cot"), insts[:3], log)
    cfg = config(tmp, "cot")
    recs = run_experiment(cfg, insts, log)
    assert len(load_log(log)) == len(insts) == len(recs)
    # a second call finds everything done and appends nothing
    size = log.stat().st_size
    run_experiment(cfg, insts, log)
    assert log.stat().st_size == size


def test_parallel_run_matches_serial(suite):
    insts, tmp = suite
    serial = run_experiment(config(tmp, "stepverify"))
    parallel = run_experiment(config(tmp, "stepverify", workers=4))
    strip = lambda rs: [{k: v for k, v in r.to_dict().items() if k != "wall_ms"} for r in rs]  # noqa: E731
    assert strip(serial) == strip(parallel)


def test_missing_script_is_a_failed_record(suite):
    insts, tmp = suite
    (tmp / "scripts" / f"{insts[0].id}.json").unlink()
    rec = run_instance(config(tmp, "cot"), insts[0])
    assert rec.status == "FAILED" and rec.error and not rec.correct


def test_aggregate_and_report(suite):
    insts, tmp = suite
    base = run_experiment(config(tmp, "cot"))
    sv = run_experiment(config(tmp, "stepverify"))
    row = aggregate(sv, base)
    assert row.n == len(insts) and row.soundness_pct == 100.0
    assert row.abstained == sum(r.abstained for r in sv)
    assert row.accuracy_pct == pytest.approx(100.0 * sum(r.correct for r in sv) / len(sv))
    text = render_report([aggregate(base, base), row])
    assert "Soundness" in text and "stepverify" in text
    with pytest.raises(IdMismatch) as err:
        aggregate(sv[1:], base)
    assert err.value.difference == {insts[0].id}


def test_record_round_trip():
    rec = RunRecord("x", "cot", "A", True, 10, interventions=[{"span": [0, 1]}], sound=None)
    assert RunRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec


def row(acc, tok):
    return ReportRow("m", acc, tok, None, 10)


def test_select_value_rules():
    base = row(80.0, 100.0)
    assert select_value(base, [(2, row(70, 40)), (3, row(80, 60)), (4, row(90, 70))]) == (3, [])
    chosen, flags = select_value(base, [(2, row(80, 50)), (3, row(85, 50))])
    assert chosen == 2 and "tie" in flags[0]
    assert select_value(base, [(2, row(10, 10))])[0] is None


@pytest.mark.parametrize("pattern,expected", [("flip", 3), ("settle", 2)])
def test_k_sweep_selects_expected_value(tmp_path, pattern, expected):
    insts = generate("spatialmap", 4, 0)
    write_scripts(kstable_sweep_suite(insts, pattern), tmp_path / "scripts")
    cfg = ExperimentConfig(method="kstable", scripts_dir=str(tmp_path / "scripts"))
    result = sweep(cfg, "k", [2, 3, 4, 5], insts)
    assert result.selected == expected
    assert f"selected k = {expected}" in result.table()


def test_sampling_methods_run_through_harness(tmp_path, game24_instance):
    good = f"The final equation is {game24_instance.gold['witness']} = 24.\n"
    write_scripts({game24_instance.id: sample_pool(["1 + 1 = 2\n", good, good, "no idea\n"])}, tmp_path / "scripts")
    save_instances([game24_instance], tmp_path / "inst.json")
    for method in ("bestofk", "majority", "generate_test"):
        rec = run_experiment(config(tmp_path, method, k=4, max_iters=4))[0]
        assert rec.correct, (method, rec)
