import json
import math

import numpy as np
import pytest

from contextmeta.datasets import SyntheticSpec, generate
from contextmeta.errors import InputError
from contextmeta.experiments import (
    CSV_COLUMNS,
    ExperimentPlan,
    RunRecord,
    build_sources,
    context_count_deltas,
    emit_metrics,
    mean_metric,
    read_metrics_csv,
    run_cell,
    sweep_context_count,
    sweep_lambda,
)
from contextmeta.meta import MetaConfig

GLYPHS = SyntheticSpec(kind="proc-glyphs", n_contexts=4, n_classes_per_context=8, samples_per_class=6, seed=0)
SINE = SyntheticSpec(kind="context-sinusoid", n_contexts=5, seed=0)


def small_plan(**kw):
    base = dict(dataset=GLYPHS, meta=MetaConfig(k=2, l=2), n_outer=6, hidden=(16, 8), finetune_steps=2,
                n_episodes=4, query_per_class=3, record_timing=False, seeds=(0, 1))
    base.update(kw)
    return ExperimentPlan(**base)


def test_csv_header_is_fixed(tmp_path):
    rec = run_cell(small_plan().cell("reptile"))
    csv_path, json_path = emit_metrics([rec], tmp_path / "m.csv")
    header = csv_path.read_text().splitlines()[0]
    assert header == ("cell_id,seed,method,lambda,k,l,way,shot,split_policy,metric_mean,metric_std,n_episodes,"
                      "wall_ms,n_contexts_used,metric_name,train_metric_mean,train_metric_std,checkpoint_hash,"
                      "params_hash,status,error")
    assert header.split(",") == list(CSV_COLUMNS)
    rows = json.loads(json_path.read_text())
    assert rows[0]["train_metric_mean"] is None  # NaN written as null


def test_csv_round_trip(tmp_path):
    plan = small_plan()
    recs = [run_cell(c) for c in plan.cells()]
    path, _ = emit_metrics(recs, tmp_path / "m.csv")
    back = read_metrics_csv(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a.cell_id == b.cell_id and a.metric_mean == b.metric_mean and a.lam == b.lam
        assert a.checkpoint_hash == b.checkpoint_hash
        assert math.isnan(b.train_metric_mean)


def test_reruns_give_identical_bytes(tmp_path):
    plan = small_plan(n_train_episodes=2)
    for name in ("a", "b"):
        emit_metrics([run_cell(c) for c in plan.cells()], tmp_path / name / "m.csv")
    assert (tmp_path / "a" / "m.csv").read_bytes() == (tmp_path / "b" / "m.csv").read_bytes()
    assert (tmp_path / "a" / "m.json").read_bytes() == (tmp_path / "b" / "m.json").read_bytes()


def test_timing_recorded_only_on_request():
    assert run_cell(small_plan().cell("reptile")).wall_ms == 0
    assert run_cell(small_plan(record_timing=True).cell("reptile")).wall_ms > 0


def test_untuned_untrained_net_scores_near_chance():
    # no meta-training and no fine-tuning: predictions carry no label information
    plan = small_plan(n_outer=0, finetune_steps=0, n_episodes=200, way=5)
    rec = run_cell(plan.cell("reptile"))
    assert rec.status == "ok"
    assert abs(rec.metric_mean - 1 / 5) < 0.05


def test_failed_cell_becomes_record():
    rec = run_cell(small_plan(query_per_class=50).cell("reptile"))
    assert rec.status == "failed"
    assert "InputError" in rec.error or "DataError" in rec.error
    assert math.isnan(rec.metric_mean)


def test_diverged_cell_is_reported():
    plan = small_plan(dataset=SINE, hidden=(16,), shot=5, query_per_class=10,
                      meta=MetaConfig(k=5, inner_lr_task=5.0))
    with np.errstate(all="ignore"):
        rec = run_cell(plan.cell("reptile"))
    assert rec.status == "failed" and "diverged" in rec.error


def test_checkpoint_beyond_cell_is_rejected():
    plan = small_plan()
    rec = run_cell(plan.cell("reptile"), keep_state=True)
    shorter = plan.cell("reptile", n_outer=3)
    assert run_cell(shorter, state=rec.state).status == "failed"


def test_checkpoint_written(tmp_path):
    from contextmeta.meta import load_state, state_digest

    rec = run_cell(small_plan(checkpoint_dir=str(tmp_path)).cell("ca-reptile"))
    path = tmp_path / f"{rec.cell_id}.ckpt"
    assert path.exists()
    assert state_digest(load_state(path)) == rec.checkpoint_hash


def test_class_split_cell_runs():
    rec = run_cell(small_plan(split_policies=("class",)).cell("reptile"))
    assert rec.status == "ok" and rec.split_policy == "class"


def test_regression_cells_report_mse():
    plan = small_plan(dataset=SINE, hidden=(16,), shot=5, query_per_class=10, n_contexts_used=3)
    rec = run_cell(plan.cell("ca-reptile"))
    assert rec.status == "ok" and rec.metric_name == "mse" and rec.metric_mean > 0
    with pytest.raises(InputError):
        build_sources(plan.cell("reptile", split_policy="class"))


def test_build_sources_keeps_target_context_out_of_training():
    plan = small_plan()
    split, train, target_task, _ = build_sources(plan.cell("reptile"))
    assert set(np.unique(train.pool.contexts)) == set(split.train_contexts)
    ep = target_task(np.random.default_rng(0))
    assert set(np.unique(ep.support.contexts)) <= set(split.target_contexts)


def test_sweep_lambda():
    recs = sweep_lambda(small_plan(seeds=(0,)), [10.0, 0.0])
    assert [r.lam for r in recs] == [10.0, 0.0]
    assert all(r.method == "ca-reptile" for r in recs)
    # lambda 0 reproduces the base method exactly
    base = run_cell(small_plan(seeds=(0,)).cell("reptile"))
    assert recs[1].params_hash == base.params_hash
    with pytest.raises(InputError):
        sweep_lambda(small_plan(meta=MetaConfig(method="reptile")), [1.0])
    with pytest.raises(InputError):
        sweep_lambda(small_plan(), [])


def test_sweep_context_count_pairs_seeds():
    recs = sweep_context_count(small_plan(), [3, 4])
    assert len(recs) == 2 * 2 * 2
    assert {(r.n_contexts_used, r.method, r.seed) for r in recs} == {
        (c, m, s) for c in (3, 4) for m in ("reptile", "ca-reptile") for s in (0, 1)}
    with pytest.raises(InputError):
        sweep_context_count(small_plan(), [5])
    with pytest.raises(InputError):
        sweep_context_count(small_plan(), [1])


def _rec(method, seed, count, metric):
    return RunRecord(cell_id=f"{method}{seed}{count}", seed=seed, method=method, lam=1.0, k=1, l=1, way=5,
                     shot=1, split_policy="context", metric_mean=metric, metric_std=0.0, n_episodes=1,
                     wall_ms=0, n_contexts_used=count)


def test_context_count_deltas_are_paired_means():
    recs = [_rec("reptile", 0, 3, 0.5), _rec("ca-reptile", 0, 3, 0.7),
            _rec("reptile", 1, 3, 0.4), _rec("ca-reptile", 1, 3, 0.4),
            _rec("reptile", 0, 4, 0.6), _rec("ca-reptile", 0, 4, 0.5),
            _rec("reptile", 2, 4, 0.9)]  # unpaired seed is ignored
    deltas = context_count_deltas(recs)
    assert deltas[3] == pytest.approx(0.1)
    assert deltas[4] == pytest.approx(-0.1)
    assert mean_metric(recs, "reptile", n_contexts_used=3) == pytest.approx(0.45)
    assert math.isnan(mean_metric(recs, "ca-fomaml"))


def test_emit_requires_records(tmp_path):
    with pytest.raises(InputError):
        emit_metrics([], tmp_path / "m.csv")


def test_generated_dataset_matches_spec():
    ds = generate(GLYPHS)
    assert len(ds.context_ids()) == 4
