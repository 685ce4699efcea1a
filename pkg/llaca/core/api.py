"""
api.py

Public entry points, re-exported from the core modules.
"""

from llaca.core.ema_policy import (
    EmaState,
    approx_hessian_fd,
    compute_beta_exact,
    compute_beta_layer,
    finish_dataset,
    init_ema,
    step,
    unroll_ema,
)
from llaca.core.metrics import compute_metrics, read_matrix_csv, write_matrix_csv
from llaca.core.tasks import generate as generate_tasks
from llaca.core.trainer import evaluate_all, run_ablation, train_continual, write_artifacts

__all__ = [
    "EmaState",
    "approx_hessian_fd",
    "compute_beta_exact",
    "compute_beta_layer",
    "compute_metrics",
    "evaluate_all",
    "finish_dataset",
    "generate_tasks",
    "init_ema",
    "read_matrix_csv",
    "run_ablation",
    "step",
    "train_continual",
    "unroll_ema",
    "write_artifacts",
    "write_matrix_csv",
]
