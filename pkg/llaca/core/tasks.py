"""
tasks.py

Deterministic synthetic task streams that induce forgetting under sequential
training:

- rotated_gaussians: class clusters on a circle in the first two features,
  rotated by task_index * drift; the other features are noise
- permuted_features: one base task, every later task sees a fixed random
  permutation of the features
- split_classes: the classes are partitioned across tasks and remapped to a
  shared output space 0..C/T-1
"""
import logging
from pathlib import Path
from typing import List, NamedTuple, Tuple

import numpy as np
import pandas as pd

from llaca.exceptions import ShapeError
from llaca.models import TaskConfig


class TaskSplit(NamedTuple):
    """Features, labels and labels before any remapping."""
    features: np.ndarray
    labels: np.ndarray
    source_labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


class Task(NamedTuple):
    train: TaskSplit
    test: TaskSplit


class TaskSequence(NamedTuple):
    tasks: Tuple[Task, ...]
    provenance: TaskConfig

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _split(features, labels, source_labels=None) -> TaskSplit:
    source = labels if source_labels is None else source_labels
    return TaskSplit(_frozen(np.asarray(features, dtype=np.float64)),
                     _frozen(np.asarray(labels, dtype=np.int64)),
                     _frozen(np.asarray(source, dtype=np.int64)))


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def class_means(config: TaskConfig, task_index: int) -> np.ndarray:
    """
    Analytic class means of a rotated_gaussians task, shape (num_classes, input_dim).
    Means sit on a circle of radius ``cluster_radius`` in the first two features.
    """
    angles = 2.0 * np.pi * np.arange(config.num_classes) / config.num_classes + task_index * config.drift
    means = np.zeros((config.num_classes, config.input_dim))
    means[:, 0] = config.cluster_radius * np.cos(angles)
    means[:, 1] = config.cluster_radius * np.sin(angles)
    return means


def _base_samples(config: TaskConfig, rng: np.random.Generator, n: int, means: np.ndarray):
    labels = rng.integers(0, means.shape[0], size=n)
    noise = rng.normal(0.0, config.noise_std, size=(n, config.input_dim))
    return means[labels] + noise, labels


def _rotated_gaussians(config: TaskConfig) -> List[Task]:
    rng = np.random.default_rng(config.seed)
    base_means = class_means(config, 0)
    # Train and test are drawn separately, so the splits never share a sample
    x_train, y_train = _base_samples(config, rng, config.train_samples, base_means)
    x_test, y_test = _base_samples(config, rng, config.test_samples, base_means)
    tasks = []
    for k in range(config.num_tasks):
        rot = rotation(k * config.drift)
        splits = []
        for x, y in ((x_train, y_train), (x_test, y_test)):
            xr = np.array(x, copy=True)
            if k:
                xr[:, :2] = x[:, :2] @ rot.T
            splits.append(_split(xr, y))
        tasks.append(Task(*splits))
    return tasks


def _cluster_means(config: TaskConfig, rng: np.random.Generator, num_classes: int) -> np.ndarray:
    directions = rng.normal(size=(num_classes, config.input_dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    return config.cluster_radius * directions / np.where(norms == 0, 1.0, norms)


def _permuted_features(config: TaskConfig) -> List[Task]:
    rng = np.random.default_rng(config.seed)
    means = _cluster_means(config, rng, config.num_classes)
    x_train, y_train = _base_samples(config, rng, config.train_samples, means)
    x_test, y_test = _base_samples(config, rng, config.test_samples, means)
    tasks = []
    for k in range(config.num_tasks):
        perm = np.arange(config.input_dim) if k == 0 else np.random.default_rng([config.seed, k]).permutation(config.input_dim)
        tasks.append(Task(_split(x_train[:, perm], y_train), _split(x_test[:, perm], y_test)))
    return tasks


def _split_classes(config: TaskConfig) -> List[Task]:
    rng = np.random.default_rng(config.seed)
    means = _cluster_means(config, rng, config.num_classes)
    per_task = config.output_classes
    tasks = []
    for k in range(config.num_tasks):
        own = means[k * per_task:(k + 1) * per_task]
        splits = []
        for n in (config.train_samples, config.test_samples):
            x, local = _base_samples(config, rng, n, own)
            splits.append(_split(x, local, local + k * per_task))
        tasks.append(Task(*splits))
    return tasks


_GENERATORS = {
    "rotated_gaussians": _rotated_gaussians,
    "permuted_features": _permuted_features,
    "split_classes": _split_classes,
}


def generate(config: TaskConfig) -> TaskSequence:
    """
    Generate the task stream described by ``config``.

    Identical configs give identical sequences.
    """
    logging.info("[tasks] Generating %d %s tasks (seed=%d)", config.num_tasks, config.kind, config.seed)
    return TaskSequence(tuple(_GENERATORS[config.kind](config)), config)


def batches(train_set: TaskSplit, batch_size: int, epoch_seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Shuffle a training split deterministically and cut it into mini-batches.
    The last batch may be short.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(train_set)
    if n == 0:
        raise ShapeError("Cannot batch an empty training set")
    order = np.random.default_rng(epoch_seed).permutation(n)
    return [(train_set.features[idx], train_set.labels[idx])
            for idx in (order[i:i + batch_size] for i in range(0, n, batch_size))]


def split_frame(split: TaskSplit) -> pd.DataFrame:
    frame = pd.DataFrame(split.features, columns=[f"x{i}" for i in range(split.features.shape[1])])
    frame["label"] = split.labels
    frame["source_label"] = split.source_labels
    return frame


def export_csv(sequence: TaskSequence, out_dir) -> List[Path]:
    """Write one CSV per task split (task_1_train.csv, task_1_test.csv, ...)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, task in enumerate(sequence.tasks, 1):
        for name, split in (("train", task.train), ("test", task.test)):
            path = out_dir / f"task_{k}_{name}.csv"
            split_frame(split).to_csv(path, index=False)
            written.append(path)
    logging.info("[tasks] Wrote %d split files to %s", len(written), out_dir)
    return written
