"""Dynamic task-weight generation and its update rules.

A linear layer over the shared features feeds a softmax that emits one
weight per task. The generator is trained by its own objective,
``sum_i w_i / L_i``, whose minimizer concentrates weight on the task with
the largest loss, so descent steadily shifts priority toward whichever task
is currently hardest. Two gradient rules are provided: a simplified one
that treats each weight as a function of its own logit only, and the exact
derivative through the full softmax coupling.
"""

from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from .core import ArgumentError, ContractViolation, DimensionError, ParamStore, softmax_rows

__all__ = [
    "DEFAULT_LOSS_FLOOR",
    "GradMode",
    "WeightGenerator",
    "validate_simplex",
    "generate_weights",
    "weight_update_loss",
    "generator_gradient",
    "naive_generator_gradient",
    "closed_form_projection",
    "two_task_weight_ratio",
]

DEFAULT_LOSS_FLOOR = 1e-8

SIMPLEX_TOL = 1e-9


class GradMode(enum.Enum):
    """Gradient rule used to update the weight generator.

    SIMPLIFIED differentiates only each task's own softmax entry (the
    diagonal of the Jacobian); EXACT includes the cross-task coupling and is
    the true gradient of the weight-update loss.
    """

    SIMPLIFIED = "simplified"
    EXACT = "exact"


class WeightGenerator:
    """Softmax weight head: one projection row and one bias per task.

    Parameters start at exactly zero so the initial weights are uniform and
    the closed-form replay of the update rule applies. The parameters live
    in their own store, disjoint from the network's.
    """

    def __init__(self, task_count: int, feature_dim: int):
        if task_count < 2:
            raise ArgumentError(f"need at least 2 tasks, got {task_count}")
        if feature_dim < 1:
            raise ArgumentError(f"feature_dim must be positive, got {feature_dim}")
        self.task_count = task_count
        self.feature_dim = feature_dim
        self.store = ParamStore()
        self.store.add("proj", np.zeros((task_count, feature_dim)))
        self.store.add("bias", np.zeros(task_count))

    @property
    def proj(self) -> np.ndarray:
        return self.store.get("proj").data

    @property
    def bias(self) -> np.ndarray:
        return self.store.get("bias").data

    def logits(self, z: np.ndarray) -> np.ndarray:
        """Linear activation per task (no rectifier, so logits may go negative)."""
        z = _check_features(z, self.feature_dim)
        return self.proj @ z + self.bias

    def apply_update(self, proj_delta: np.ndarray, bias_delta: np.ndarray) -> None:
        self.store.set_value("proj", self.proj + proj_delta)
        self.store.set_value("bias", self.bias + bias_delta)


def _check_features(z, feature_dim: int) -> np.ndarray:
    arr = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if arr.shape != (feature_dim,):
        raise DimensionError(f"feature vector must have shape ({feature_dim},), got {arr.shape}")
    return arr


def validate_simplex(weights, task_count: int | None = None) -> np.ndarray:
    """Check weights lie on the simplex; returns them as a float64 array."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or (task_count is not None and w.shape[0] != task_count):
        raise DimensionError(f"expected {task_count} weights, got shape {w.shape}")
    if np.any(w < -1e-12) or np.any(w > 1.0 + 1e-12):
        raise ContractViolation(f"weights outside [0, 1]: {w.tolist()}")
    if abs(float(w.sum()) - 1.0) > SIMPLEX_TOL:
        raise ContractViolation(f"weights sum to {float(w.sum())!r}, not 1")
    return w


def generate_weights(z, gen: WeightGenerator) -> np.ndarray:
    """Softmax of the generator logits; always a point on the task simplex."""
    return softmax_rows(gen.logits(z)[None, :])[0]


def _floored_losses(task_losses, floor: float) -> np.ndarray:
    losses = np.asarray(task_losses, dtype=np.float64)
    if np.any(losses < 0.0):
        raise ContractViolation(f"task losses must be non-negative: {losses.tolist()}")
    return np.maximum(losses, floor)


def weight_update_loss(weights, task_losses, floor: float = DEFAULT_LOSS_FLOOR) -> float:
    """The generator objective sum_i w_i / max(L_i, floor).

    Task losses are treated as constants here; minimizing over the simplex
    puts all mass on the largest loss, which is what makes descent favor the
    hard task.
    """
    w = validate_simplex(weights)
    losses = _floored_losses(task_losses, floor)
    if w.shape != losses.shape:
        raise DimensionError(f"{w.shape[0]} weights but {losses.shape[0]} losses")
    return float(np.sum(w / losses))


def generator_gradient(
    z,
    gen: WeightGenerator,
    task_losses,
    mode: GradMode = GradMode.SIMPLIFIED,
    floor: float = DEFAULT_LOSS_FLOOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the weight-update loss w.r.t. the generator parameters.

    Returns (projection gradient [T x d], bias gradient [T]). In SIMPLIFIED
    mode row i carries w_i (1 - w_i) / L_i; EXACT mode subtracts the softmax
    cross terms, giving w_i (1 / L_i - sum_j w_j / L_j).
    """
    zv = _check_features(z, gen.feature_dim)
    losses = _floored_losses(task_losses, floor)
    if losses.shape != (gen.task_count,):
        raise DimensionError(f"need {gen.task_count} losses, got shape {losses.shape}")
    w = generate_weights(zv, gen)
    if mode is GradMode.SIMPLIFIED:
        coeff = w * (1.0 - w) / losses
    elif mode is GradMode.EXACT:
        coeff = w * (1.0 / losses - float(np.sum(w / losses)))
    else:  # pragma: no cover - enum is closed
        raise ArgumentError(f"unknown gradient mode {mode!r}")
    return coeff[:, None] * zv[None, :], coeff


def naive_generator_gradient(
    z, gen: WeightGenerator, task_losses, floor: float = DEFAULT_LOSS_FLOOR
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the plain weighted total sum_i w_i L_i w.r.t. the generator.

    Descending this shifts weight toward the smallest loss: the coefficient
    is w_i (L_i - sum_j w_j L_j), positive exactly for above-average losses.
    """
    zv = _check_features(z, gen.feature_dim)
    losses = _floored_losses(task_losses, floor)
    if losses.shape != (gen.task_count,):
        raise DimensionError(f"need {gen.task_count} losses, got shape {losses.shape}")
    w = generate_weights(zv, gen)
    coeff = w * (losses - float(np.sum(w * losses)))
    return coeff[:, None] * zv[None, :], coeff


def closed_form_projection(
    history: Sequence[tuple[np.ndarray, np.ndarray]],
    eta: float = 1.0,
    floor: float = DEFAULT_LOSS_FLOOR,
    task_count: int | None = None,
    feature_dim: int | None = None,
) -> np.ndarray:
    """Accumulated projection matrix after replaying an update history.

    Assumes zero initialization, the SIMPLIFIED rule, and a frozen bias; the
    projection is the running sum of -eta * coefficient * z over the steps,
    with each step's coefficients computed at the state the previous steps
    produced. An empty history yields the zero matrix (dims must be given).
    """
    if not history:
        if task_count is None or feature_dim is None:
            raise ArgumentError("empty history needs explicit task_count and feature_dim")
        return np.zeros((task_count, feature_dim))
    first_z = np.asarray(history[0][0], dtype=np.float64)
    task_count = np.asarray(history[0][1]).shape[0]
    gen = WeightGenerator(task_count, first_z.shape[0])
    for z, task_losses in history:
        proj_grad, _ = generator_gradient(z, gen, task_losses, GradMode.SIMPLIFIED, floor)
        gen.apply_update(-eta * proj_grad, np.zeros(task_count))
    return gen.proj.copy()


def two_task_weight_ratio(L1: float, L2: float, a1: float, a2: float, zzT: float) -> float:
    """Closed-form w1/w2 after one simplified step from zero initialization.

    ratio = exp((1/L2 - 1/L1) * a1 a2 / (a1 + a2)^2 * zzT), where a1, a2 are
    the exponentiated logits at the step and zzT the squared feature norm.
    A ratio above 1 means the larger-loss task got the larger weight.
    """
    for label, value in (("L1", L1), ("L2", L2), ("a1", a1), ("a2", a2)):
        if not (value > 0.0) or not math.isfinite(value):
            raise ContractViolation(f"{label} must be positive and finite, got {value!r}")
    if zzT < 0.0:
        raise ContractViolation(f"zzT must be non-negative, got {zzT!r}")
    exponent = (1.0 / L2 - 1.0 / L1) * (a1 * a2 / (a1 + a2) ** 2) * zzT
    try:
        return math.exp(exponent)
    except OverflowError:
        return math.inf
