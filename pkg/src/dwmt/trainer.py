"""Training loop with parallel dual updates.

Each step computes, from the same pre-step parameter state, (a) the
gradient of the weighted total loss for the network parameters and (b) the
generator update for the task weights, then applies both. The weights used
in the total are always the pre-step generator output. Four strategies are
supported: the hard-task-prioritizing dynamic rule, the naive dynamic rule
that descends the plain weighted total, fixed weights, and a dedicated
single-task path.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import ArgumentError, NumericError, backward
from .data import TaskDataset
from .losses import CenterBank, LossConfig, total_multitask_loss, update_centers
from .network import MultiTaskNet, task_loss_graph
from .weights import (
    DEFAULT_LOSS_FLOOR,
    GradMode,
    WeightGenerator,
    generate_weights,
    generator_gradient,
    naive_generator_gradient,
    validate_simplex,
)

__all__ = [
    "STRATEGIES",
    "TrainerConfig",
    "TraceRow",
    "TrainingTrace",
    "TrainingDiverged",
    "Trainer",
    "train",
    "naive_dynamic_update",
    "task_accuracy",
    "write_trace_csv",
]

STRATEGIES = ("dynamic", "naive", "fixed", "single")


class TrainingDiverged(RuntimeError):
    """A loss or parameter became non-finite during training."""

    def __init__(self, message: str, task_id: int | None = None):
        super().__init__(message)
        self.task_id = task_id


@dataclass
class TrainerConfig:
    strategy: str = "dynamic"
    steps: int = 300
    batch_size: int = 32
    seed: int = 0
    lr_net: float = 0.05
    lr_gen: float = 0.1
    grad_mode: GradMode = GradMode.SIMPLIFIED
    smooth_window: int = 10
    use_smoothed_losses: bool = True
    fixed_weights: tuple[float, ...] | None = None
    task_id: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ArgumentError("steps must be >= 0 and batch_size >= 1")
        if not (self.lr_net > 0.0 and self.lr_gen > 0.0):
            raise ArgumentError("learning rates must be positive")
        if self.smooth_window < 1:
            raise ArgumentError(f"smooth_window must be >= 1, got {self.smooth_window}")
        if self.strategy == "fixed":
            if self.fixed_weights is None:
                raise ArgumentError("strategy 'fixed' needs fixed_weights")
            validate_simplex(self.fixed_weights)
        if self.strategy == "single" and self.task_id is None:
            raise ArgumentError("strategy 'single' needs task_id")


@dataclass(frozen=True)
class TraceRow:
    step: int
    losses: tuple[float, ...]
    smoothed: tuple[float, ...]
    weights: tuple[float, ...]
    total: float


class TrainingTrace:
    """Per-step record of task losses, weights, and the total."""

    def __init__(self, task_count: int):
        self.task_count = task_count
        self.rows: list[TraceRow] = []

    def append(self, row: TraceRow) -> None:
        if len(row.losses) != self.task_count:
            raise ArgumentError(f"expected {self.task_count} losses per row")
        validate_simplex(row.weights, self.task_count)
        if any(v < 0.0 for v in row.losses):
            raise ArgumentError("task losses must be non-negative")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def losses_array(self) -> np.ndarray:
        return np.asarray([row.losses for row in self.rows])

    def smoothed_array(self) -> np.ndarray:
        return np.asarray([row.smoothed for row in self.rows])

    def weights_array(self) -> np.ndarray:
        return np.asarray([row.weights for row in self.rows])


def write_trace_csv(trace: TrainingTrace, path, comment: str | None = None) -> None:
    t = trace.task_count
    columns = (["step"]
               + [f"loss_{i + 1}" for i in range(t)]
               + [f"smoothed_{i + 1}" for i in range(t)]
               + [f"w_{i + 1}" for i in range(t)]
               + ["total"])
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in trace:
            values = list(row.losses) + list(row.smoothed) + list(row.weights) + [row.total]
            fh.write(str(row.step) + "," + ",".join(repr(float(v)) for v in values) + "\n")


class Trainer:
    """Owns one net, one generator, one center bank, and the trace."""

    def __init__(self, net: MultiTaskNet, gen: WeightGenerator, data: TaskDataset,
                 cfg: TrainerConfig, loss_cfg: LossConfig | None = None,
                 bank: CenterBank | None = None, center_update_rate: float = 0.5):
        t = net.cfg.task_count
        if data.task_count != t:
            raise ArgumentError(f"dataset has {data.task_count} tasks, net has {t}")
        if gen.task_count != t or gen.feature_dim != net.cfg.shared_dim:
            raise ArgumentError("generator shape does not match the network")
        if cfg.strategy == "fixed" and len(cfg.fixed_weights) != t:
            raise ArgumentError(f"fixed_weights must have {t} entries")
        if cfg.strategy == "single" and not (0 <= cfg.task_id < t):
            raise ArgumentError(f"task_id must lie in [0, {t})")
        self.net = net
        self.gen = gen
        self.data = data
        self.cfg = cfg
        self.loss_cfg = loss_cfg or LossConfig()
        self.bank = bank or CenterBank(net.cfg.classes_per_task[0], net.cfg.embed_dim,
                                       center_update_rate)
        self.trace = TrainingTrace(t)
        self._history: list[deque] = [deque(maxlen=cfg.smooth_window) for _ in range(t)]

    def step(self, apply_order: str = "net_first") -> TraceRow:
        """One parallel dual update; returns the appended trace row."""
        cfg = self.cfg
        t = self.net.cfg.task_count
        step_index = len(self.trace)
        batches = [self.data.batch(i, step_index, cfg.batch_size) for i in range(t)]

        self.net.store.zero_grads()
        loss_nodes, shared_values = [], []
        embed0 = None
        raw = []
        for i in range(t):
            loss, _, embed, shared = task_loss_graph(self.net, i, batches[i], self.bank,
                                                     self.loss_cfg)
            value = float(loss)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"loss of task {i} is not finite at step {step_index}", task_id=i)
            loss_nodes.append(loss)
            shared_values.append(shared.value)
            raw.append(value)
            if i == 0:
                embed0 = embed
        for i, value in enumerate(raw):
            self._history[i].append(value)
        smoothed = tuple(float(np.mean(h)) for h in self._history)
        z_mean = np.vstack(shared_values).mean(axis=0)

        weights = self._current_weights(z_mean)
        total_node = total_multitask_loss(loss_nodes, weights)
        backward(total_node)

        gen_update = self._generator_update(z_mean, raw, smoothed)

        def apply_net():
            try:
                self.net.store.sgd_step(cfg.lr_net)
            except NumericError:
                raise TrainingDiverged(
                    f"parameters became non-finite at step {step_index}") from None

        def apply_gen():
            if gen_update is not None:
                proj_grad, bias_grad = gen_update
                self.gen.apply_update(-cfg.lr_gen * proj_grad, -cfg.lr_gen * bias_grad)

        if apply_order == "net_first":
            apply_net()
            apply_gen()
        elif apply_order == "gen_first":
            apply_gen()
            apply_net()
        else:
            raise ArgumentError(f"unknown apply_order {apply_order!r}")

        update_centers(embed0.value, batches[0].labels, self.bank)

        row = TraceRow(step=step_index, losses=tuple(raw), smoothed=smoothed,
                       weights=tuple(float(w) for w in weights), total=float(total_node))
        self.trace.append(row)
        return row

    def run(self) -> TrainingTrace:
        for _ in range(self.cfg.steps):
            self.step()
        return self.trace

    def _current_weights(self, z_mean: np.ndarray) -> np.ndarray:
        # z_mean is the batch mean of the shared features; the generator is
        # its only consumer and no gradient flows from it into the trunk
        t = self.net.cfg.task_count
        if self.cfg.strategy in ("dynamic", "naive"):
            return generate_weights(z_mean, self.gen)
        if self.cfg.strategy == "fixed":
            return np.asarray(self.cfg.fixed_weights, dtype=np.float64)
        onehot = np.zeros(t)
        onehot[self.cfg.task_id] = 1.0
        return onehot

    def _generator_update(self, z_mean, raw, smoothed):
        if self.cfg.strategy not in ("dynamic", "naive"):
            return None
        losses = smoothed if self.cfg.use_smoothed_losses else tuple(raw)
        if self.cfg.strategy == "dynamic":
            return generator_gradient(z_mean, self.gen, losses, self.cfg.grad_mode)
        return naive_generator_gradient(z_mean, self.gen, losses)


def train(net: MultiTaskNet, gen: WeightGenerator, data: TaskDataset, cfg: TrainerConfig,
          loss_cfg: LossConfig | None = None, bank: CenterBank | None = None,
          center_update_rate: float = 0.5) -> TrainingTrace:
    """Run the configured number of steps and return the full trace."""
    trainer = Trainer(net, gen, data, cfg, loss_cfg, bank, center_update_rate)
    return trainer.run()


def naive_dynamic_update(gen: WeightGenerator, z, task_losses, lr: float,
                         floor: float = DEFAULT_LOSS_FLOOR) -> WeightGenerator:
    """One descent step on the plain weighted total; shifts weight toward the
    smallest loss. Mutates and returns the generator."""
    proj_grad, bias_grad = naive_generator_gradient(z, gen, task_losses, floor)
    gen.apply_update(-lr * proj_grad, -lr * bias_grad)
    return gen


def task_accuracy(net: MultiTaskNet, data: TaskDataset, task_id: int) -> float:
    """Fraction of the task's samples whose head argmax matches the label."""
    logits, _ = net.task_output(data.inputs(task_id), task_id)
    predicted = np.argmax(logits.data, axis=1)
    return float(np.mean(predicted == data.labels(task_id)))
