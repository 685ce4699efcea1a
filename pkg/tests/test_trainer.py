import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from llaca.config.settings import build_run_config, get_config
from llaca.core import trainer
from llaca.core.ema_policy import finish_dataset, init_ema
from llaca.core.metrics import compute_metrics, read_matrix_csv
from llaca.core.params import ParamVector
from llaca.core.tasks import generate
from llaca.core.tinynet import init_model
from llaca.core.trainer import (
    clamp_rate,
    evaluate_all,
    run_ablation,
    train_continual,
    train_task,
    write_ablation,
    write_artifacts,
)
from llaca.exceptions import IncompatibleLayoutError, NumericalError
from llaca.models import BetaRecord, NetSpec, RunConfig, TaskConfig


def _iterations_per_task(config):
    return math.ceil(config.task_config.train_samples / config.batch_size) * config.epochs_per_task


def _trace_array(records, field):
    return np.array([getattr(r, field) for r in records], dtype=float)


def test_run_is_deterministic(small_run_config):
    first = train_continual(small_run_config)
    second = train_continual(small_run_config)
    assert first.accuracy_matrix == second.accuracy_matrix
    assert first.loss_curves == second.loss_curves
    assert all(a.equals(b) for a, b in zip(first.checkpoints, second.checkpoints))
    assert_array_equal(_trace_array(first.beta_trace, "beta_raw"), _trace_array(second.beta_trace, "beta_raw"))
    assert [r.layer_name for r in first.beta_trace] == [r.layer_name for r in second.beta_trace]


def test_accuracy_matrix_shape(small_run_config):
    artifacts = train_continual(small_run_config)
    rows = artifacts.accuracy_matrix.rows
    assert [len(r) for r in rows] == [1, 2, 3]
    assert artifacts.accuracy_matrix.unit == "fraction"
    assert all(0.0 <= a <= 1.0 for row in rows for a in row)
    assert len(artifacts.checkpoints) == len(artifacts.loss_curves) == 3
    assert artifacts.live_matrix is None


def test_trace_is_complete(small_run_config):
    artifacts = train_continual(small_run_config)
    per_task = _iterations_per_task(small_run_config)
    layers = 2 * (len(small_run_config.net_spec.layer_sizes) - 1)
    assert len(artifacts.beta_trace) == 3 * per_task * layers
    assert [len(c) for c in artifacts.loss_curves] == [per_task] * 3
    assert all(0.0 < r.beta_applied < 1.0 for r in artifacts.beta_trace)
    first_task = [r for r in artifacts.beta_trace if r.task == 0]
    assert first_task[0].iteration == 1 and first_task[-1].iteration == per_task
    # every task starts without snapshots
    starts = [r for r in artifacts.beta_trace if r.iteration == 1]
    assert len(starts) == 3 * layers
    assert all(math.isnan(r.beta_raw) and r.clamped for r in starts)


def test_handoff_starts_next_task_from_checkpoint(small_run_config):
    artifacts = train_continual(small_run_config)
    assert artifacts.task_start_params[0].equals(init_model(small_run_config.net_spec).params)
    for k in range(2):
        assert artifacts.task_start_params[k + 1].equals(artifacts.checkpoints[k])


def test_without_handoff_live_params_continue(small_run_config):
    artifacts = train_continual(small_run_config.model_copy(update={"handoff": False}))
    assert not artifacts.task_start_params[1].equals(artifacts.checkpoints[0])


def test_fixed_ema_without_handoff_matches_plain_on_live_params(small_run_config):
    plain = train_continual(small_run_config.with_policy("plain", evaluate_on="live"))
    fixed = train_continual(small_run_config.with_policy("fixed_ema", handoff=False, evaluate_on="live", ema_beta=0.9))
    assert plain.accuracy_matrix.rows == fixed.accuracy_matrix.rows
    assert plain.loss_curves == fixed.loss_curves
    assert plain.beta_trace == []
    assert all(r.beta_applied == 0.9 for r in fixed.beta_trace)


def test_evaluate_both(small_run_config):
    artifacts = train_continual(small_run_config.model_copy(update={"evaluate_on": "both"}))
    assert artifacts.live_matrix is not None
    assert artifacts.live_matrix.num_tasks == artifacts.accuracy_matrix.num_tasks


def test_beta_one_keeps_initial_parameters(small_run_config):
    tasks = generate(small_run_config.task_config)
    model = init_model(small_run_config.net_spec)
    state = init_ema(model.params, beta_mode="fixed", fixed_beta=1.0)
    for k in range(2):
        model, state, losses, records = train_task(model, tasks[k].train, state, small_run_config, k)
        checkpoint, _ = finish_dataset(state)
        assert checkpoint.equals(init_model(small_run_config.net_spec).params)
        assert all(r.task == k for r in records)
    assert not model.params.equals(init_model(small_run_config.net_spec).params)


def test_single_task_run():
    config = RunConfig(task_config=TaskConfig(num_tasks=1, train_samples=100, test_samples=50),
                       net_spec=NetSpec(layer_sizes=[16, 4]))
    artifacts = train_continual(config)
    assert len(artifacts.accuracy_matrix.rows) == 1
    assert compute_metrics(artifacts.accuracy_matrix).forgetting is None


def test_evaluate_all(small_run_config):
    tasks = generate(small_run_config.task_config)
    params = init_model(small_run_config.net_spec).params
    first = evaluate_all(params, small_run_config.net_spec, tasks, 2)
    assert first == evaluate_all(params, small_run_config.net_spec, tasks, 2)
    assert len(first) == 3
    assert all(0.0 <= a <= 1.0 for a in first)
    assert evaluate_all(params, small_run_config.net_spec, tasks, 0) == first[:1]
    with pytest.raises(ValueError):
        evaluate_all(params, small_run_config.net_spec, tasks, 3)
    with pytest.raises(IncompatibleLayoutError):
        evaluate_all(ParamVector.from_layers([("W0", [0.0])]), small_run_config.net_spec, tasks, 0)


def test_training_beats_untrained_model(golden):
    config = build_run_config(get_config({"POLICY": "plain", "NUM_TASKS": 1, "EPOCHS_PER_TASK": 5}))
    tasks = generate(config.task_config)
    untrained = init_model(config.net_spec)
    trained, _, _, _ = train_task(untrained, tasks[0].train, None, config, 0)
    before = evaluate_all(untrained.params, config.net_spec, tasks, 0)[0]
    after = evaluate_all(trained.params, config.net_spec, tasks, 0)[0]
    assert after > before
    assert after > 0.7
    golden("trainer.task0_accuracy_untrained", before)
    golden("trainer.task0_accuracy_trained", after)


def test_nan_loss_aborts(small_run_config, monkeypatch):
    monkeypatch.setattr(trainer, "loss_and_grad", lambda model, X, y: (float("nan"), model.params))
    with pytest.raises(NumericalError) as err:
        train_continual(small_run_config)
    assert err.value.task == 0
    assert err.value.iteration == 1


def test_write_artifacts(tmp_path, small_run_config):
    artifacts = train_continual(small_run_config.model_copy(update={"evaluate_on": "both", "trace_audit_norms": True}))
    write_artifacts(artifacts, tmp_path)
    for name in ("accuracy_matrix.csv", "accuracy_matrix_live.csv", "beta_trace.csv", "loss_curves.csv",
                 "metrics.txt", "metrics.csv"):
        assert (tmp_path / name).exists(), name
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == [
        "checkpoint_task_1.json", "checkpoint_task_2.json", "checkpoint_task_3.json"]
    header = (tmp_path / "beta_trace.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "task,iteration,layer,beta_raw,beta_applied,clamped,prev_grad_plus_one_l1,grad_delta_l1"
    assert read_matrix_csv(tmp_path / "accuracy_matrix.csv").rows == artifacts.accuracy_matrix.rows


def test_ablation_table(small_run_config):
    table, results = run_ablation(small_run_config)
    assert list(table.columns) == ["arm", "Avg.ACC", "Forgetting", "New.ACC", "Clamp.Rate"]
    assert list(table["arm"]) == ["plain", "fixed_ema(0.99)", "llaca"]
    plain = compute_metrics(train_continual(small_run_config.with_policy("plain")).accuracy_matrix)
    row = table.iloc[0]
    assert row["Avg.ACC"] == plain.avg_acc
    assert row["Forgetting"] == plain.forgetting
    assert row["New.ACC"] == plain.new_acc
    assert set(results) == {"plain", "fixed_ema", "llaca"}
    rates = table.set_index("arm")["Clamp.Rate"]
    assert math.isnan(rates["plain"])
    assert rates["fixed_ema(0.99)"] == 0.0
    assert rates["llaca"] == clamp_rate(results["llaca"].beta_trace)
    assert 0.0 < rates["llaca"] <= 1.0


def test_clamp_rate():
    def record(clamped):
        return BetaRecord(iteration=1, layer_name="W0", beta_raw=0.5, beta_applied=0.5, clamped=clamped)
    assert clamp_rate([]) is None
    assert clamp_rate([record(True), record(False), record(True), record(True)]) == 0.75


def test_task_log_reports_clamp_rate(small_run_config, caplog):
    caplog.set_level(logging.INFO)
    artifacts = train_continual(small_run_config)
    done = [r.getMessage() for r in caplog.records if "done:" in r.getMessage()]
    assert len(done) == 3
    first = [rec for rec in artifacts.beta_trace if rec.task == 0]
    assert done[0].endswith(f"{sum(r.clamped for r in first)}/{len(first)} betas clamped "
                            f"({100.0 * clamp_rate(first):.2f}%)")

    caplog.clear()
    train_continual(small_run_config.with_policy("plain"))
    assert all("clamped" not in r.getMessage() for r in caplog.records)


def test_parallel_ablation_matches_sequential(small_run_config, tmp_path):
    sequential, _ = run_ablation(small_run_config)
    parallel, results = run_ablation(small_run_config, workers=2)
    assert sequential.equals(parallel)
    write_ablation(parallel, results, tmp_path)
    assert (tmp_path / "ablation.csv").exists()
    assert not (tmp_path / "plain" / "beta_trace.csv").exists()
    assert (tmp_path / "llaca" / "beta_trace.csv").exists()


@pytest.mark.slow
def test_dynamic_ema_forgets_less_than_plain_sgd():
    wins = 0
    for seed in range(5):
        base = build_run_config(get_config({"RUN_SEED": seed}))
        plain = compute_metrics(train_continual(base.with_policy("plain")).accuracy_matrix)
        llaca = compute_metrics(train_continual(base.with_policy("llaca")).accuracy_matrix)
        wins += llaca.forgetting < plain.forgetting
        assert llaca.new_acc >= 0.9 * plain.new_acc
    assert wins >= 4
