"""
Format converter utilities.

Conversions between accuracy matrices, metric reports, beta traces and their
tabular (pandas) and text representations.
"""
import math
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, List, Tuple

import pandas as pd

from llaca.exceptions import MatrixFormatError
from llaca.models import AccuracyMatrix, BetaRecord, MetricsReport

TRAINER_INDEX_COLUMN = "after_task"
UNIT_RANGES = {"percent": 100.0, "fraction": 1.0}
UNIT_QUANTUM = {"percent": Decimal("0.01"), "fraction": Decimal("0.0001")}


def read_matrix_frame(path) -> Tuple[pd.DataFrame, str]:
    """
    Load an accuracy-matrix CSV as strings, honouring a leading
    ``# unit: ...`` comment.

    Returns:
        (frame of raw cells, unit)
    """
    unit = "percent"
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if first.startswith("#"):
            key, _, value = first.lstrip("#").partition(":")
            value = value.strip().lower()
            if key.strip().lower() != "unit" or value not in UNIT_RANGES:
                raise MatrixFormatError(f"unsupported header comment '{first.strip()}'")
            unit = value
        else:
            f.seek(0)
        try:
            frame = pd.read_csv(f, dtype=str, keep_default_na=False, skip_blank_lines=True)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise MatrixFormatError(f"unreadable CSV: {e}") from e
    return frame, unit


def _parse_cell(raw: str, row: int, column: str, limit: float) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise MatrixFormatError(f"'{raw}' in column '{column}' is not a number", row=row) from None
    if not math.isfinite(value) or value < 0.0 or value > limit:
        raise MatrixFormatError(f"value {raw} in column '{column}' outside [0, {limit:g}]", row=row)
    return value


def frame_to_matrix(frame: pd.DataFrame, unit: str) -> AccuracyMatrix:
    """
    Validate raw cells and build an AccuracyMatrix.

    Row r (1-based) must carry numbers in its first r task columns and nothing after.
    """
    columns = [str(c).strip() for c in frame.columns]
    trainer_format = bool(columns) and columns[0] == TRAINER_INDEX_COLUMN
    task_columns = columns[1:] if trainer_format else columns
    T = len(task_columns)
    if T == 0:
        raise MatrixFormatError("no task columns")
    if len(frame) == 0:
        raise MatrixFormatError("no data rows (T must be >= 1)")
    limit = UNIT_RANGES[unit]

    rows: List[List[float]] = []
    for r, (_, series) in enumerate(frame.iterrows(), 1):
        cells = [c.strip() if isinstance(c, str) else "" for c in series.tolist()]
        if trainer_format:
            index, cells = cells[0], cells[1:]
            if index != str(r):
                raise MatrixFormatError(f"{TRAINER_INDEX_COLUMN} is '{index}', expected {r}", row=r)
        if r > T:
            raise MatrixFormatError(f"more rows than tasks ({T})", row=r)
        values = [_parse_cell(cells[i], r, task_columns[i], limit) if cells[i] else None for i in range(T)]
        if any(v is None for v in values[:r]):
            raise MatrixFormatError(f"expected {r} values on or below the diagonal", row=r)
        if any(v is not None for v in values[r:]):
            raise MatrixFormatError("values above the diagonal", row=r)
        rows.append(values[:r])
    if len(rows) != T:
        raise MatrixFormatError(f"{len(rows)} rows for {T} task columns", row=len(rows))

    names = None if trainer_format else task_columns
    return AccuracyMatrix(rows=rows, unit=unit, task_names=names)


def matrix_to_frame(m: AccuracyMatrix) -> pd.DataFrame:
    """Trainer CSV layout: after_task (1-based) followed by one column per task."""
    names = m.names()
    records = []
    for j, row in enumerate(m.rows):
        record = {TRAINER_INDEX_COLUMN: j + 1}
        for i, name in enumerate(names):
            record[name] = row[i] if i < len(row) else None
        records.append(record)
    return pd.DataFrame(records, columns=[TRAINER_INDEX_COLUMN] + names)


def _fmt(value, unit: str) -> str:
    if value is None:
        return "n/a"
    # half-up on the decimal value: 61.885 -> 61.89
    rounded = Decimal(f"{value:.10f}").quantize(UNIT_QUANTUM[unit], rounding=ROUND_HALF_UP)
    # ADF terms may be negative; never print "-0.00"
    return str(rounded.copy_abs() if rounded.is_zero() else rounded)


def report_to_lines(report: MetricsReport) -> List[str]:
    lines = [
        f"unit={report.unit}",
        f"tasks={report.num_tasks}",
        f"avg_acc={_fmt(report.avg_acc, report.unit)}",
        f"forgetting={_fmt(report.forgetting, report.unit)}",
        f"new_acc={_fmt(report.new_acc, report.unit)}",
    ]
    for name, value in zip(report.task_names, report.ada):
        lines.append(f"ada.{name}={_fmt(value, report.unit)}")
    for name, value in zip(report.task_names, report.adf):
        lines.append(f"adf.{name}={_fmt(value, report.unit)}")
    return lines


def report_to_frame(report: MetricsReport) -> pd.DataFrame:
    return pd.DataFrame({
        "task": report.task_names,
        "ada": report.ada,
        "adf": report.adf,
    })


def beta_trace_frame(records: Iterable[BetaRecord], audit: bool = False) -> pd.DataFrame:
    columns = ["task", "iteration", "layer", "beta_raw", "beta_applied", "clamped"]
    if audit:
        columns += ["prev_grad_plus_one_l1", "grad_delta_l1"]
    return pd.DataFrame([rec.to_row(audit) for rec in records], columns=columns)
