"""Task losses: softmax cross-entropy, class-center distance, and the
weighted multi-task combination.

All batch reductions are means, so magnitudes are batch-size invariant.
That matters downstream: the weight generator compares loss magnitudes
across tasks, which only makes sense if they share a scale.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    ArgumentError,
    DimensionError,
    Node,
    add,
    as_node,
    log_softmax_rows,
    make_node,
    scale,
    softmax_rows,
)
from .weights import validate_simplex

__all__ = [
    "PROB_FLOOR",
    "LossConfig",
    "CenterBank",
    "cross_entropy",
    "center_loss",
    "update_centers",
    "verification_loss",
    "total_multitask_loss",
]

# probabilities are clamped here before the log so a confident miss stays finite
PROB_FLOOR = 1e-12


class LossConfig:
    """Hyperparameters of the verification-task loss."""

    def __init__(self, center_weight: float = 0.003, loss_floor: float = 1e-8):
        if not (math.isfinite(center_weight) and center_weight >= 0.0):
            raise ArgumentError(f"center_weight must be finite and >= 0, got {center_weight!r}")
        if not (1e-12 <= loss_floor <= 1e-3):
            raise ArgumentError(f"loss_floor must lie in [1e-12, 1e-3], got {loss_floor!r}")
        self.center_weight = float(center_weight)
        self.loss_floor = float(loss_floor)


class CenterBank:
    """One running center per class for an embedding head.

    Centers are a running statistic maintained by :func:`update_centers`,
    not trained by gradient descent.
    """

    def __init__(self, class_count: int, embed_dim: int, update_rate: float = 0.5):
        if class_count < 1 or embed_dim < 1:
            raise ArgumentError(
                f"need class_count >= 1 and embed_dim >= 1, got {class_count}, {embed_dim}"
            )
        if not (0.0 < update_rate <= 1.0):
            raise ArgumentError(f"update_rate must lie in (0, 1], got {update_rate!r}")
        self.class_count = class_count
        self.embed_dim = embed_dim
        self.update_rate = float(update_rate)
        self._centers = np.zeros((class_count, embed_dim))

    @property
    def centers(self) -> np.ndarray:
        view = self._centers.view()
        view.flags.writeable = False
        return view

    def set_centers(self, values) -> None:
        arr = np.asarray(getattr(values, "data", values), dtype=np.float64)
        if arr.shape != self._centers.shape:
            raise DimensionError(f"centers must have shape {self._centers.shape}, got {arr.shape}")
        self._centers = arr.copy()


def _check_labels(labels, class_count: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ArgumentError(f"labels must be a 1-d integer array, got shape {arr.shape}")
    arr = arr.astype(np.int64)
    if arr.size == 0:
        raise ArgumentError("labels must not be empty")
    if arr.min() < 0 or arr.max() >= class_count:
        raise ArgumentError(
            f"labels must lie in [0, {class_count}), got range [{arr.min()}, {arr.max()}]"
        )
    return arr


def cross_entropy(logits, labels) -> Node:
    """Mean over the batch of -log p(label), with p from a stable softmax.

    The log is clamped at log(1e-12) so a vanishing target probability is
    reported as a large finite loss rather than infinity.
    """
    logits = as_node(logits)
    if logits.value.ndim != 2:
        raise DimensionError(f"logits must be [batch x classes], got shape {logits.shape}")
    batch, class_count = logits.shape
    y = _check_labels(labels, class_count)
    if y.shape[0] != batch:
        raise DimensionError(f"{batch} logit rows but {y.shape[0]} labels")

    logp = log_softmax_rows(logits.value)
    picked = logp[np.arange(batch), y]
    clamp = math.log(PROB_FLOOR)
    unclamped = picked > clamp
    value = -float(np.mean(np.maximum(picked, clamp)))

    probs = softmax_rows(logits.value)
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch), y] = 1.0
    row_grad = (probs - onehot) / batch
    row_grad[~unclamped] = 0.0  # clamped rows contribute a constant

    def vjp(up: np.ndarray):
        return (float(up) * row_grad,)

    return make_node(np.asarray(value), (logits,), vjp)


def center_loss(embeddings, labels, bank: CenterBank) -> Node:
    """Mean squared Euclidean distance from each embedding to its class center.

    The squared form keeps the gradient linear in the embedding. Centers are
    read-only here; see :func:`update_centers`.
    """
    embeddings = as_node(embeddings)
    if embeddings.value.ndim != 2 or embeddings.shape[1] != bank.embed_dim:
        raise DimensionError(
            f"embeddings must be [batch x {bank.embed_dim}], got shape {embeddings.shape}"
        )
    y = _check_labels(labels, bank.class_count)
    batch = embeddings.shape[0]
    if y.shape[0] != batch:
        raise DimensionError(f"{batch} embedding rows but {y.shape[0]} labels")

    diff = embeddings.value - bank.centers[y]
    value = float(np.mean(np.sum(diff * diff, axis=1)))

    def vjp(up: np.ndarray):
        return (float(up) * 2.0 * diff / batch,)

    return make_node(np.asarray(value), (embeddings,), vjp)


def update_centers(embeddings, labels, bank: CenterBank) -> CenterBank:
    """Move each class center toward its batch mean by the bank's update rate.

    Classes absent from the batch are untouched. Mutates and returns the bank.
    """
    emb = np.asarray(getattr(embeddings, "value", getattr(embeddings, "data", embeddings)),
                     dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != bank.embed_dim:
        raise DimensionError(f"embeddings must be [batch x {bank.embed_dim}], got {emb.shape}")
    y = _check_labels(labels, bank.class_count)
    if y.shape[0] != emb.shape[0]:
        raise DimensionError(f"{emb.shape[0]} embedding rows but {y.shape[0]} labels")
    for cls in np.unique(y):
        batch_mean = emb[y == cls].mean(axis=0)
        current = bank._centers[cls]
        bank._centers[cls] = current - bank.update_rate * (current - batch_mean)
    return bank


def verification_loss(logits, labels, embeddings, bank: CenterBank, cfg: LossConfig) -> Node:
    """Cross-entropy plus center_weight times the center loss."""
    ce = cross_entropy(logits, labels)
    if cfg.center_weight == 0.0:
        return ce
    return add(ce, scale(center_loss(embeddings, labels, bank), cfg.center_weight))


def total_multitask_loss(task_losses, weights):
    """Weighted sum of the per-task losses under simplex-constrained weights.

    Accepts plain floats (returns a float) or graph nodes (returns a node).
    Terms with an exactly-zero weight are dropped from the graph, so a
    one-hot weighting reproduces the dedicated single-task computation
    bit for bit.
    """
    w = validate_simplex(weights)
    if len(task_losses) != w.shape[0]:
        raise DimensionError(f"{len(task_losses)} losses but {w.shape[0]} weights")
    if any(isinstance(loss, Node) for loss in task_losses):
        total: Node | None = None
        for loss, weight in zip(task_losses, w):
            if weight == 0.0:
                continue
            term = scale(loss if isinstance(loss, Node) else as_node(loss), float(weight))
            total = term if total is None else add(total, term)
        if total is None:
            raise ArgumentError("all task weights are zero")
        return total
    values = np.asarray([float(loss) for loss in task_losses], dtype=np.float64)
    return float(sum(float(weight) * float(loss)
                     for loss, weight in zip(values, w) if weight != 0.0))
