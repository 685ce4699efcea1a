"""
trainer.py

Continual training loop and evaluation sweep. Wires tinynet, tasks and
ema_policy together:

- plain:     SGD only, the live parameters are deployed
- fixed_ema: SGD plus an EMA with a constant weight
- llaca:     SGD plus the dynamic layer-wise EMA weight

In EMA modes theta* is checkpointed at the end of every task, optionally
handed back to the live model, and evaluated on all tasks seen so far.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from llaca.core.ema_policy import EmaState, finish_dataset, init_ema
from llaca.core.ema_policy import step as ema_step
from llaca.core.metrics import compute_metrics, write_matrix_csv, write_report
from llaca.core.params import ParamVector
from llaca.core.tasks import TaskSequence, TaskSplit, batches, generate
from llaca.core.tinynet import Model, accuracy, init_model, loss_and_grad, sgd_step
from llaca.exceptions import NumericalError
from llaca.models import AccuracyMatrix, BetaRecord, NetSpec, RunConfig
from llaca.utils.format_converter import beta_trace_frame
from llaca.utils.io_utils import checkpoint_path, ensure_dir, save_checkpoint

ABLATION_ARMS = ("plain", "fixed_ema", "llaca")
ABLATION_COLUMNS = ["arm", "Avg.ACC", "Forgetting", "New.ACC", "Clamp.Rate"]


class RunArtifacts(NamedTuple):
    """
    Everything a continual run produces.

    Attributes:
        config: The RunConfig that produced the run
        accuracy_matrix: One row per completed task (fraction unit)
        live_matrix: Matrix of the live parameters when EVALUATE_ON is "both"
        beta_trace: BetaRecords in training order (empty for plain)
        checkpoints: Deployed parameters at the end of each task
        task_start_params: Live parameters at the start of each task
        loss_curves: Per-task list of mini-batch losses
    """
    config: RunConfig
    accuracy_matrix: AccuracyMatrix
    live_matrix: Optional[AccuracyMatrix]
    beta_trace: List[BetaRecord]
    checkpoints: List[ParamVector]
    task_start_params: List[ParamVector]
    loss_curves: List[List[float]]


def epoch_seed(run_seed: int, task_index: int, epoch: int) -> int:
    """Shuffle seed of one epoch, derived from the run seed only."""
    return int(np.random.SeedSequence([run_seed, task_index, epoch]).generate_state(1)[0])


def evaluate_all(params: ParamVector, spec: NetSpec, tasks: TaskSequence, upto: int) -> List[float]:
    """
    Test accuracy of ``params`` on tasks 0..upto (inclusive).

    Raises:
        IncompatibleLayoutError: if params do not fit spec
        ValueError: if upto is out of range
    """
    if not (0 <= upto < len(tasks)):
        raise ValueError(f"upto must lie in [0, {len(tasks) - 1}], got {upto}")
    model = Model(spec, params)
    return [accuracy(model, task.test.features, task.test.labels) for task in tasks.tasks[:upto + 1]]


def _ema_state(config: RunConfig, params: ParamVector) -> Optional[EmaState]:
    if config.policy == "plain":
        return None
    if config.policy == "fixed_ema":
        return init_ema(params, clamp_value=config.clamp_value, beta_mode="fixed", fixed_beta=config.ema_beta)
    return init_ema(params, clamp_value=config.clamp_value, beta_mode="practical_layerwise",
                    beta_reduction=config.beta_reduction)


def train_task(model: Model, train_set: TaskSplit, state: Optional[EmaState], config: RunConfig,
               task_index: int, show_progress: bool = False
               ) -> Tuple[Model, Optional[EmaState], List[float], List[BetaRecord]]:
    """
    Train one task: SGD on every mini-batch, followed by an EMA step on the
    post-update parameters and the gradient that produced them.

    Args:
        model: Live model at the start of the task
        train_set: Training split of the task
        state: EMA state, or None for plain SGD
        config: Run configuration
        task_index: Zero-based task index (stamped on the records)
        show_progress: Show a tqdm bar over batches

    Returns:
        (model, state, losses, records)

    Raises:
        NumericalError: on a non-finite loss or gradient
    """
    losses: List[float] = []
    records: List[BetaRecord] = []
    iteration = 0
    for epoch in range(config.epochs_per_task):
        seed = epoch_seed(config.run_seed, task_index, epoch)
        for X, y in tqdm(batches(train_set, config.batch_size, seed), desc=f"Task {task_index + 1}",
                         disable=not show_progress, leave=False):
            iteration += 1
            loss, grads = loss_and_grad(model, X, y)
            if not math.isfinite(loss) or not np.isfinite(grads.values).all():
                logging.error("[trainer] Non-finite loss %.4g in task %d at iteration %d",
                              loss, task_index + 1, iteration)
                raise NumericalError(f"Non-finite loss {loss} in task {task_index + 1} at iteration {iteration}",
                                     task=task_index, iteration=iteration)
            losses.append(loss)
            model = sgd_step(model, grads, config.lr)
            if state is not None:
                state, step_records = ema_step(state, model.params, grads)
                records.extend(rec.model_copy(update={"task": task_index}) for rec in step_records)
    return model, state, losses, records


def clamp_rate(records: Sequence[BetaRecord]) -> Optional[float]:
    """Share of recorded betas that were replaced by the clamp value; None without records."""
    if not records:
        return None
    return sum(rec.clamped for rec in records) / len(records)


def train_continual(config: RunConfig, show_progress: bool = False) -> RunArtifacts:
    """
    Train on every task of the configured stream in order and fill the
    accuracy matrix after each task.

    Fully deterministic given the config.
    """
    start = time.time()
    tasks = generate(config.task_config)
    model = init_model(config.net_spec)
    state = _ema_state(config, model.params)
    T = len(tasks)
    logging.info("[trainer] Starting run: policy=%s, tasks=%d, lr=%g, batch_size=%d",
                 config.policy, T, config.lr, config.batch_size)

    rows, live_rows = [], []
    trace: List[BetaRecord] = []
    checkpoints, starts, curves = [], [], []
    for k in tqdm(range(T), desc="Tasks", disable=not show_progress):
        logging.info("[trainer] Task %d/%d (%d training samples)", k + 1, T, len(tasks[k].train))
        starts.append(model.params)
        model, state, losses, records = train_task(model, tasks[k].train, state, config, k, show_progress)
        trace.extend(records)
        curves.append(losses)

        live = model.params
        if state is None:
            deployed = live
        else:
            deployed, next_init = finish_dataset(state)
            if config.handoff:
                model = Model(config.net_spec, next_init)
        checkpoints.append(deployed)

        primary = live if config.evaluate_on == "live" else deployed
        rows.append(evaluate_all(primary, config.net_spec, tasks, k))
        if config.evaluate_on == "both":
            live_rows.append(evaluate_all(live, config.net_spec, tasks, k))

        if records:
            logging.info("[trainer] Task %d/%d done: final loss %.4f, accuracy %.4f, %d/%d betas clamped (%.2f%%)",
                         k + 1, T, losses[-1], rows[-1][-1], sum(rec.clamped for rec in records), len(records),
                         100.0 * clamp_rate(records))
        else:
            logging.info("[trainer] Task %d/%d done: final loss %.4f, accuracy %.4f",
                         k + 1, T, losses[-1], rows[-1][-1])

    logging.info("[trainer] Run finished in %.2f seconds", time.time() - start)
    return RunArtifacts(
        config=config,
        accuracy_matrix=AccuracyMatrix(rows=rows, unit="fraction"),
        live_matrix=AccuracyMatrix(rows=live_rows, unit="fraction") if live_rows else None,
        beta_trace=trace,
        checkpoints=checkpoints,
        task_start_params=starts,
        loss_curves=curves,
    )


def loss_curve_frame(curves: Sequence[Sequence[float]]) -> pd.DataFrame:
    records = [{"task": k + 1, "iteration": i + 1, "loss": loss}
               for k, losses in enumerate(curves) for i, loss in enumerate(losses)]
    return pd.DataFrame(records, columns=["task", "iteration", "loss"])


def write_artifacts(artifacts: RunArtifacts, out_dir, save_checkpoints: bool = True) -> List[Path]:
    """
    Write a run's files into ``out_dir``:

    accuracy_matrix.csv, accuracy_matrix_live.csv (EVALUATE_ON=both),
    beta_trace.csv (EMA policies), checkpoints/, loss_curves.csv,
    metrics.txt and metrics.csv.
    """
    out_dir = ensure_dir(out_dir)
    written = [write_matrix_csv(artifacts.accuracy_matrix, out_dir / "accuracy_matrix.csv")]
    if artifacts.live_matrix is not None:
        written.append(write_matrix_csv(artifacts.live_matrix, out_dir / "accuracy_matrix_live.csv"))
    if artifacts.config.policy != "plain":
        trace = out_dir / "beta_trace.csv"
        beta_trace_frame(artifacts.beta_trace, artifacts.config.trace_audit_norms).to_csv(trace, index=False)
        written.append(trace)
    if save_checkpoints:
        for k, params in enumerate(artifacts.checkpoints):
            written.append(save_checkpoint(checkpoint_path(out_dir, k), params))
    curves = out_dir / "loss_curves.csv"
    loss_curve_frame(artifacts.loss_curves).to_csv(curves, index=False)
    written.append(curves)
    written.extend(write_report(compute_metrics(artifacts.accuracy_matrix), out_dir))
    logging.info("[trainer] Wrote %d files to %s", len(written), out_dir)
    return written


def ablation_configs(config: RunConfig) -> List[RunConfig]:
    """The three arms with shared seeds: plain, fixed_ema(ema_beta), llaca."""
    return [config.with_policy(policy) for policy in ABLATION_ARMS]


def arm_label(config: RunConfig) -> str:
    if config.policy == "fixed_ema":
        return f"fixed_ema({config.ema_beta:g})"
    return config.policy


def run_ablation(config: RunConfig, workers: int = 1, show_progress: bool = False
                 ) -> Tuple[pd.DataFrame, Dict[str, RunArtifacts]]:
    """
    Run all three policy arms and tabulate Avg.ACC / Forgetting / New.ACC.

    The Clamp.Rate column is the share of betas replaced by the clamp value
    over the whole run (n/a for plain SGD). When it is close to 1 the llaca
    arm behaves like fixed_ema(clamp_value).

    Args:
        config: Base configuration; its policy field is ignored
        workers: Number of processes (1 = sequential)
        show_progress: Show progress bars (sequential runs only)

    Returns:
        (table with one row per arm, artifacts keyed by policy)
    """
    arms = ablation_configs(config)
    if workers > 1:
        logging.info("[trainer] Running %d ablation arms on %d workers", len(arms), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(partial(train_continual, show_progress=False), arms))
    else:
        results = [train_continual(arm, show_progress=show_progress) for arm in arms]

    rows = []
    for arm, artifacts in zip(arms, results):
        report = compute_metrics(artifacts.accuracy_matrix)
        rows.append({
            "arm": arm_label(arm),
            "Avg.ACC": report.avg_acc,
            "Forgetting": report.forgetting,
            "New.ACC": report.new_acc,
            "Clamp.Rate": clamp_rate(artifacts.beta_trace),
        })
    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    return table, {arm.policy: artifacts for arm, artifacts in zip(arms, results)}


def write_ablation(table: pd.DataFrame, results: Dict[str, RunArtifacts], out_dir,
                   save_checkpoints: bool = True) -> List[Path]:
    """ablation.csv plus one artifact subdirectory per arm."""
    out_dir = ensure_dir(out_dir)
    path = out_dir / "ablation.csv"
    table.to_csv(path, index=False)
    written = [path]
    for policy, artifacts in results.items():
        written.extend(write_artifacts(artifacts, out_dir / policy, save_checkpoints=save_checkpoints))
    return written
