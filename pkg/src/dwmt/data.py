"""Seed-deterministic multi-task datasets with controllable difficulty.

Every task is a Gaussian-cluster classification problem over one shared set
of class means, so the tasks genuinely share latent structure. Difficulty
is controlled per task by three orthogonal knobs: cluster spread, label
noise, and class count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ArgumentError, Tensor

__all__ = [
    "TaskSpec",
    "DatasetSpec",
    "TaskBatch",
    "TaskDataset",
    "make_tasks",
    "export_task_csv",
    "load_task_csv",
]


@dataclass(frozen=True)
class TaskSpec:
    """Difficulty knobs of one task."""

    classes: int
    sigma: float
    label_noise: float = 0.0
    transform_scale: float = 1.0


@dataclass(frozen=True)
class DatasetSpec:
    tasks: tuple[TaskSpec, ...]
    input_dim: int = 8
    samples_per_task: int = 256
    mean_scale: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if len(self.tasks) < 2:
            raise ArgumentError(f"need at least 2 tasks, got {len(self.tasks)}")
        if self.input_dim < 1 or self.samples_per_task < 2:
            raise ArgumentError("input_dim must be >= 1 and samples_per_task >= 2")
        if not (self.mean_scale > 0.0):
            raise ArgumentError(f"mean_scale must be positive, got {self.mean_scale!r}")
        for i, task in enumerate(self.tasks):
            if task.classes < 2:
                raise ArgumentError(f"task {i}: needs >= 2 classes, got {task.classes}")
            if not (task.sigma > 0.0):
                raise ArgumentError(f"task {i}: sigma must be positive, got {task.sigma!r}")
            if not (0.0 <= task.label_noise < 0.5):
                raise ArgumentError(
                    f"task {i}: label_noise must lie in [0, 0.5), got {task.label_noise!r}"
                )
            if not (task.transform_scale > 0.0):
                raise ArgumentError(f"task {i}: transform_scale must be positive")

    @property
    def task_count(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class TaskBatch:
    x: Tensor
    labels: np.ndarray
    task_id: int


class TaskDataset:
    """Immutable per-task samples with deterministic cyclic batching."""

    def __init__(self, spec: DatasetSpec, seed: int,
                 inputs: list[np.ndarray], labels: list[np.ndarray]):
        self.spec = spec
        self.seed = seed
        self._inputs = [Tensor(x) for x in inputs]
        self._labels = [np.asarray(y, dtype=np.int64) for y in labels]
        for y in self._labels:
            y.flags.writeable = False

    @property
    def task_count(self) -> int:
        return self.spec.task_count

    def inputs(self, task_id: int) -> Tensor:
        return self._inputs[task_id]

    def labels(self, task_id: int) -> np.ndarray:
        return self._labels[task_id]

    def batch(self, task_id: int, step: int, size: int) -> TaskBatch:
        """Batch for a given step: cyclic slicing, no randomness at train time."""
        x = self._inputs[task_id].data
        y = self._labels[task_id]
        n = x.shape[0]
        idx = (step * size + np.arange(size)) % n
        return TaskBatch(x=Tensor(x[idx]), labels=y[idx].copy(), task_id=task_id)


def _balanced_labels(rng: np.random.Generator, n: int, classes: int) -> np.ndarray:
    """Class counts differ by at most one sample."""
    return rng.permutation(np.arange(n) % classes).astype(np.int64)


def _apply_label_noise(rng: np.random.Generator, labels: np.ndarray, rate: float) -> None:
    """Corrupt about rate*n samples by swapping label pairs across classes.

    Swapping keeps the per-class counts exactly balanced, unlike resampling.
    """
    n = labels.shape[0]
    swaps = int(round(rate * n / 2.0))
    if swaps == 0:
        return
    order = rng.permutation(n)
    pending = -1
    performed = 0
    for idx in order:
        if performed >= swaps:
            break
        if pending < 0:
            pending = idx
        elif labels[idx] != labels[pending]:
            labels[pending], labels[idx] = labels[idx], labels[pending]
            pending = -1
            performed += 1


def make_tasks(spec: DatasetSpec, seed: int) -> TaskDataset:
    """Generate the dataset; identical (spec, seed) gives identical data."""
    rng = np.random.default_rng(seed)
    max_classes = max(task.classes for task in spec.tasks)
    shared_means = rng.normal(0.0, spec.mean_scale, size=(max_classes, spec.input_dim))
    inputs: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    n = spec.samples_per_task
    for task in spec.tasks:
        y = _balanced_labels(rng, n, task.classes)
        noise = rng.normal(0.0, 1.0, size=(n, spec.input_dim))
        x = task.transform_scale * shared_means[y] + task.sigma * noise
        _apply_label_noise(rng, y, task.label_noise)
        inputs.append(x)
        labels.append(y)
    return TaskDataset(spec, seed, inputs, labels)


def export_task_csv(dataset: TaskDataset, task_id: int, path, comment: str | None = None) -> None:
    x = dataset.inputs(task_id).data
    y = dataset.labels(task_id)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"x_{j}" for j in range(x.shape[1])])
        for label, row in zip(y, x):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_task_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back an exported task: (inputs, labels)."""
    xs: list[list[float]] = []
    ys: list[int] = []
    with open(path, "r", newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if not header or header[0] != "label":
        raise ArgumentError(f"{path}: not a task CSV (missing 'label' header)")
    for lineno, row in enumerate(reader, start=2):
        try:
            ys.append(int(row[0]))
            xs.append([float(v) for v in row[1:]])
        except (ValueError, IndexError):
            raise ArgumentError(f"{path}: malformed row {lineno}") from None
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.int64)
