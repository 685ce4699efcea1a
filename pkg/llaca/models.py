"""
Pydantic models for configurations, trace records and metric reports.
"""
import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class NetSpec(BaseModel):
    """
    Architecture of the fully-connected classifier.
    layer_sizes = [input, hidden..., classes].
    """
    model_config = ConfigDict(frozen=True)

    layer_sizes: List[int] = Field(default_factory=lambda: [16, 32, 4])
    activation: Literal["relu", "tanh"] = "relu"
    init_seed: int = Field(default=0, ge=0)

    @field_validator("layer_sizes")
    @classmethod
    def _check_sizes(cls, sizes: List[int]) -> List[int]:
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output size")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        return list(sizes)

    @property
    def num_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]


class TaskConfig(BaseModel):
    """Recipe for a deterministic synthetic task stream."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["rotated_gaussians", "permuted_features", "split_classes"] = "rotated_gaussians"
    num_tasks: int = Field(default=6, ge=1)
    train_samples: int = Field(default=2000, ge=1)
    test_samples: int = Field(default=500, ge=1)
    input_dim: int = Field(default=16, ge=1)
    num_classes: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0)
    drift: float = math.pi / 6
    # Cluster geometry
    cluster_radius: float = Field(default=3.0, gt=0)
    noise_std: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _check_kind(self) -> "TaskConfig":
        if self.kind == "split_classes" and self.num_classes % self.num_tasks != 0:
            raise ValueError(
                f"split_classes needs num_classes ({self.num_classes}) divisible by num_tasks ({self.num_tasks})"
            )
        if self.kind == "rotated_gaussians" and self.input_dim < 2:
            raise ValueError("rotated_gaussians needs input_dim >= 2")
        if not math.isfinite(self.drift):
            raise ValueError("drift must be finite")
        return self

    @property
    def output_classes(self) -> int:
        """Width of the shared output space seen by the network."""
        if self.kind == "split_classes":
            return self.num_classes // self.num_tasks
        return self.num_classes


class RunConfig(BaseModel):
    """One continual-learning run (one arm of the ablation)."""
    model_config = ConfigDict(frozen=True)

    task_config: TaskConfig = Field(default_factory=TaskConfig)
    net_spec: NetSpec = Field(default_factory=NetSpec)
    lr: float = Field(default=0.05, gt=0)
    batch_size: int = Field(default=16, ge=1)
    epochs_per_task: int = Field(default=1, ge=1)
    policy: Literal["plain", "fixed_ema", "llaca"] = "llaca"
    ema_beta: float = 0.99
    clamp_value: float = Field(default=0.99, gt=0, lt=1)
    beta_reduction: Literal["ratio_of_norms", "elementwise_mean"] = "ratio_of_norms"
    handoff: bool = True
    evaluate_on: Literal["deployed", "live", "both"] = "deployed"
    trace_audit_norms: bool = False
    run_seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_run(self) -> "RunConfig":
        if self.policy == "fixed_ema" and not (0.0 < self.ema_beta < 1.0):
            raise ValueError(f"fixed_ema needs ema_beta in (0, 1), got {self.ema_beta}")
        if self.net_spec.num_inputs != self.task_config.input_dim:
            raise ValueError(
                f"net input width {self.net_spec.num_inputs} != task input_dim {self.task_config.input_dim}"
            )
        if self.net_spec.num_classes != self.task_config.output_classes:
            raise ValueError(
                f"net output width {self.net_spec.num_classes} != task output classes {self.task_config.output_classes}"
            )
        return self

    def with_policy(self, policy: str, **changes) -> "RunConfig":
        """Copy of this config for another ablation arm."""
        return self.model_copy(update={"policy": policy, **changes})


class BetaRecord(BaseModel):
    """One computed EMA weight for one layer at one iteration."""
    iteration: int
    layer_name: str
    beta_raw: float
    beta_applied: float
    clamped: bool
    task: int = 0
    prev_grad_plus_one_l1: Optional[float] = None
    grad_delta_l1: Optional[float] = None

    def to_row(self, audit: bool = False) -> Dict[str, object]:
        row = {
            "task": self.task,
            "iteration": self.iteration,
            "layer": self.layer_name,
            "beta_raw": self.beta_raw,
            "beta_applied": self.beta_applied,
            "clamped": int(self.clamped),
        }
        if audit:
            row["prev_grad_plus_one_l1"] = self.prev_grad_plus_one_l1
            row["grad_delta_l1"] = self.grad_delta_l1
        return row


class AccuracyMatrix(BaseModel):
    """
    Lower-triangular accuracy matrix.
    rows[j][i] = accuracy on task i after training task j (zero-based), i <= j.
    """
    rows: List[List[float]]
    unit: Literal["percent", "fraction"] = "percent"
    task_names: Optional[List[str]] = None

    @model_validator(mode="after")
    def _check_triangle(self) -> "AccuracyMatrix":
        if not self.rows:
            raise ValueError("accuracy matrix needs at least one row (T >= 1)")
        for j, row in enumerate(self.rows):
            if len(row) != j + 1:
                raise ValueError(f"row {j + 1} must have {j + 1} entries, got {len(row)}")
            if not all(math.isfinite(x) for x in row):
                raise ValueError(f"row {j + 1} contains non-finite values")
        if self.task_names is not None and len(self.task_names) != len(self.rows):
            raise ValueError("task_names must name every task")
        return self

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def names(self) -> List[str]:
        if self.task_names:
            return list(self.task_names)
        return [f"task_{i + 1}" for i in range(self.num_tasks)]


class MetricsReport(BaseModel):
    """Continual-learning metrics of one accuracy matrix."""
    unit: Literal["percent", "fraction"]
    num_tasks: int
    avg_acc: float
    new_acc: float
    forgetting: Optional[float] = None
    ada: List[float]
    adf: List[Optional[float]]
    task_names: List[str]
