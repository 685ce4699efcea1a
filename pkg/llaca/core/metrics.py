"""
metrics.py

Continual-learning metrics computed from a lower-triangular accuracy matrix
A[j][i] (accuracy on task i after training task j, zero-based):

- Avg.ACC    mean of the final row
- New.ACC    mean of the diagonal
- Forgetting mean over i < T-1 of max_{j in [i, T-1]} A[j][i] - A[T-1][i]
- ADA(t)     mean of A[i][t] for i = t..T-1
- ADF(t)     mean over i = t+1..T-1 of max_{j in [t, i-1]} A[j][t] - A[i][t]

Forgetting is reported as a positive drop (running maximum minus final value)
and never goes below zero. ADF compares each row against the maximum of the
rows before it, so a column that climbs above its earlier best gives a
negative term.
"""
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from llaca.exceptions import MatrixFormatError
from llaca.models import AccuracyMatrix, MetricsReport
from llaca.utils.format_converter import (
    frame_to_matrix,
    matrix_to_frame,
    read_matrix_frame,
    report_to_frame,
    report_to_lines,
)

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def _running_drop(column: np.ndarray, upto: int) -> float:
    """max(column[0..upto]) - column[upto]; never negative."""
    return float(np.max(column[:upto + 1]) - column[upto])


def _drop_from_best(column: np.ndarray, k: int) -> float:
    """max(column[0..k-1]) - column[k]; negative when row k sets a new best."""
    return float(np.max(column[:k]) - column[k])


def compute_metrics(m: AccuracyMatrix) -> MetricsReport:
    """
    Compute Avg.ACC, New.ACC, Forgetting, ADA and ADF.

    Args:
        m: Validated accuracy matrix (T >= 1)

    Returns:
        MetricsReport in the unit of the matrix; ``forgetting`` is None for T = 1
        and the last task's ADF is None
    """
    T = m.num_tasks
    final = np.asarray(m.rows[-1], dtype=np.float64)
    diagonal = np.array([m.rows[i][i] for i in range(T)], dtype=np.float64)
    # column t holds A[t..T-1][t]
    columns = [np.array([m.rows[j][t] for j in range(t, T)], dtype=np.float64) for t in range(T)]

    forgetting = None
    if T > 1:
        forgetting = float(np.mean([_running_drop(columns[i], T - 1 - i) for i in range(T - 1)]))

    ada = [float(np.mean(col)) for col in columns]
    adf: List[Optional[float]] = []
    for t, col in enumerate(columns):
        if len(col) == 1:
            adf.append(None)
        else:
            adf.append(float(np.mean([_drop_from_best(col, k) for k in range(1, len(col))])))

    return MetricsReport(
        unit=m.unit,
        num_tasks=T,
        avg_acc=float(final.mean()),
        new_acc=float(diagonal.mean()),
        forgetting=forgetting,
        ada=ada,
        adf=adf,
        task_names=m.names(),
    )


def resolve_matrix_path(path_or_name: Union[str, Path]) -> Path:
    """Accept a CSV path or the name of a bundled fixture (e.g. "type1")."""
    path = Path(path_or_name)
    if path.exists():
        return path
    fixture = FIXTURE_DIR / f"{path_or_name}.csv"
    if fixture.exists():
        return fixture
    raise FileNotFoundError(f"No accuracy matrix at '{path_or_name}' and no fixture of that name")


def read_matrix_csv(path_or_name: Union[str, Path]) -> AccuracyMatrix:
    """
    Read an accuracy matrix in either supported CSV format.

    - trainer format: first column ``after_task`` (1-based), then ``task_1..task_T``
    - fixtures format: one column per dataset name, rows in training order,
      blank cells above the diagonal

    An optional first line ``# unit: percent|fraction`` sets the unit (default percent).

    Raises:
        MatrixFormatError: naming the offending 1-based data row
    """
    path = resolve_matrix_path(path_or_name)
    frame, unit = read_matrix_frame(path)
    matrix = frame_to_matrix(frame, unit)
    logging.info("[metrics] Read %dx%d %s matrix from %s", matrix.num_tasks, matrix.num_tasks, unit, path)
    return matrix


def write_matrix_csv(m: AccuracyMatrix, path: Union[str, Path]) -> Path:
    """Write the trainer format with a leading unit comment."""
    path = Path(path)
    frame = matrix_to_frame(m)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# unit: {m.unit}\n")
        frame.to_csv(f, index=False)
    return path


def format_report(report: MetricsReport) -> str:
    """key=value text, two decimals, "n/a" for undefined values."""
    return "\n".join(report_to_lines(report)) + "\n"


def write_report(report: MetricsReport, out_dir: Union[str, Path]) -> List[Path]:
    """Write metrics.txt (key=value) and metrics.csv (per-task ADA/ADF)."""
    out_dir = Path(out_dir)
    txt = out_dir / "metrics.txt"
    txt.write_text(format_report(report), encoding="utf-8")
    csv = out_dir / "metrics.csv"
    report_to_frame(report).to_csv(csv, index=False)
    return [txt, csv]


__all__ = [
    "MatrixFormatError",
    "compute_metrics",
    "format_report",
    "read_matrix_csv",
    "resolve_matrix_path",
    "write_matrix_csv",
    "write_report",
]
