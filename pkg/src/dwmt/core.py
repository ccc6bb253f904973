"""Dense float64 tensors, parameter stores, and a small reverse-mode tape.

The differentiable ops defined here are exactly the set needed by the
multi-task model: matrix product, bias add, elementwise activations, scaling
and reductions. Every op validates shapes eagerly and registers a
vector-Jacobian rule, so any composition can be checked against central
finite differences with :func:`grad_check`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ArgumentError",
    "ContractViolation",
    "DimensionError",
    "NumericError",
    "Tensor",
    "ParamStore",
    "Node",
    "constant",
    "param",
    "make_node",
    "matmul",
    "add",
    "add_bias",
    "mul_const",
    "scale",
    "relu",
    "tanh",
    "sum_all",
    "backward",
    "grad_check",
    "softmax_stable",
    "softmax_rows",
    "log_softmax_rows",
]


class DimensionError(ValueError):
    """Shapes of the operands do not fit the operation."""


class ArgumentError(ValueError):
    """An argument is outside the operation's domain."""


class ContractViolation(ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


def _as_float_array(values) -> np.ndarray:
    if isinstance(values, Tensor):
        return values.data
    return np.array(values, dtype=np.float64, order="C")


class Tensor:
    """Immutable dense array of 64-bit floats in row-major order."""

    __slots__ = ("_data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C", copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "_data", arr)

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @property
    def data(self) -> np.ndarray:
        """The underlying read-only float64 array."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return int(self._data.size)

    def item(self) -> float:
        if self._data.size != 1:
            raise DimensionError(f"item() needs a single value, shape is {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape})"


class ParamStore:
    """Named parameters, each paired with a same-shape gradient accumulator."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, values) -> None:
        if name in self._params:
            raise ArgumentError(f"parameter {name!r} already exists")
        tensor = values if isinstance(values, Tensor) else Tensor(values)
        self._params[name] = tensor
        self._grads[name] = np.zeros(tensor.shape, dtype=np.float64)

    def names(self) -> tuple[str, ...]:
        return tuple(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def get(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ArgumentError(f"unknown parameter {name!r}") from None

    def set_value(self, name: str, values) -> None:
        tensor = values if isinstance(values, Tensor) else Tensor(values)
        current = self.get(name)
        if tensor.shape != current.shape:
            raise DimensionError(
                f"parameter {name!r} has shape {current.shape}, got {tensor.shape}"
            )
        self._params[name] = tensor

    def grad(self, name: str) -> np.ndarray:
        self.get(name)
        view = self._grads[name].view()
        view.flags.writeable = False
        return view

    def zero_grads(self) -> None:
        for acc in self._grads.values():
            acc[...] = 0.0

    def accumulate_grad(self, name: str, delta: np.ndarray) -> None:
        self.get(name)
        acc = self._grads[name]
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != acc.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {acc.shape}, got {delta.shape}"
            )
        acc += delta

    def sgd_step(self, lr: float, names: Iterable[str] | None = None) -> None:
        """Plain gradient descent: p <- p - lr * grad."""
        for name in self.names() if names is None else names:
            updated = self.get(name).data - lr * self._grads[name]
            self.set_value(name, Tensor(updated))

    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def state(self) -> dict[str, Tensor]:
        return dict(self._params)


# --------------------------------------------------------------------------
# reverse-mode tape
# --------------------------------------------------------------------------

_VJP = Callable[[np.ndarray], tuple[np.ndarray, ...]]


class Node:
    """A value in the computation graph.

    Leaves wrap constants or parameters; interior nodes carry the
    vector-Jacobian rule of the op that produced them.
    """

    __slots__ = ("value", "grad", "_parents", "_vjp", "_binding")

    def __init__(self, value: np.ndarray, parents: tuple["Node", ...], vjp: _VJP | None,
                 binding: tuple[ParamStore, str] | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp
        self._binding = binding

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def tensor(self) -> Tensor:
        return Tensor(self.value)

    def __float__(self) -> float:
        if self.value.shape != ():
            raise DimensionError(f"cannot convert shape {self.shape} to float")
        return float(self.value)


def make_node(value: np.ndarray, parents: tuple[Node, ...], vjp: _VJP) -> Node:
    """Create an interior graph node with the given backward rule."""
    return Node(np.asarray(value, dtype=np.float64), parents, vjp)


def constant(values) -> Node:
    """Wrap a value as a graph leaf that receives no parameter gradient."""
    return Node(_as_float_array(values), (), None)


def param(store: ParamStore, name: str) -> Node:
    """A leaf bound to a store entry; backward() accumulates into its slot."""
    return Node(store.get(name).data, (), None, binding=(store, name))


def as_node(values) -> Node:
    return values if isinstance(values, Node) else constant(values)


def matmul(a, b) -> Node:
    """Matrix product with backward rules dA = dC @ B^T and dB = A^T @ dC."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def vjp(up: np.ndarray):
        return up @ bv.T, av.T @ up

    return make_node(av @ bv, (a, b), vjp)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def vjp(up: np.ndarray):
        return up, up

    return make_node(a.value + b.value, (a, b), vjp)


def add_bias(x, bias) -> Node:
    """Add a length-n bias row to every row of a [m x n] matrix."""
    x, bias = as_node(x), as_node(bias)
    if x.value.ndim != 2 or bias.value.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_bias needs [m x n] + [n], got {x.shape} and {bias.shape}")

    def vjp(up: np.ndarray):
        return up, up.sum(axis=0)

    return make_node(x.value + bias.value[None, :], (x, bias), vjp)


def mul_const(x, factor) -> Node:
    """Multiply by a constant scalar or same-shape array (not differentiated)."""
    x = as_node(x)
    factor = np.asarray(factor, dtype=np.float64)
    if factor.shape not in ((), x.shape):
        raise DimensionError(f"mul_const factor shape {factor.shape} does not fit {x.shape}")

    def vjp(up: np.ndarray):
        return (up * factor,)

    return make_node(x.value * factor, (x,), vjp)


def scale(x, factor: float) -> Node:
    return mul_const(x, float(factor))


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0.0

    def vjp(up: np.ndarray):
        return (up * mask,)

    return make_node(np.where(mask, x.value, 0.0), (x,), vjp)


def tanh(x) -> Node:
    x = as_node(x)
    out = np.tanh(x.value)

    def vjp(up: np.ndarray):
        return (up * (1.0 - out * out),)

    return make_node(out, (x,), vjp)


def sum_all(x) -> Node:
    x = as_node(x)
    xv = x.value

    def vjp(up: np.ndarray):
        return (np.full(xv.shape, float(up)),)

    return make_node(np.asarray(xv.sum()), (x,), vjp)


def _topo_order(out: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(out: Node) -> None:
    """Propagate gradients from a scalar node to all leaves.

    Parameter leaves additionally accumulate into their store's slots.
    """
    if out.value.shape != ():
        raise DimensionError(f"backward needs a scalar output, got shape {out.shape}")
    order = _topo_order(out)
    for node in order:
        node.grad = None
    out.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        for parent, contribution in zip(node._parents, node._vjp(node.grad)):
            parent.grad = contribution if parent.grad is None else parent.grad + contribution
    for node in order:
        if node._binding is not None and node.grad is not None:
            store, name = node._binding
            store.accumulate_grad(name, node.grad)


# --------------------------------------------------------------------------
# numerically stable softmax kernels
# --------------------------------------------------------------------------

def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; safe for entries up to +-1e4."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_stable(logits) -> Tensor:
    """Softmax of a length-n vector; output sums to 1 and preserves order."""
    arr = _as_float_array(logits)
    if arr.ndim != 1 or arr.size == 0:
        raise ArgumentError(f"softmax_stable needs a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("softmax_stable needs finite inputs")
    return Tensor(softmax_rows(arr[None, :])[0])


# --------------------------------------------------------------------------
# finite-difference gradient verification
# --------------------------------------------------------------------------

def grad_check(f: Callable[[ParamStore], float], params: ParamStore, eps: float) -> float:
    """Compare the analytic gradients deposited by ``f`` against central
    differences.

    ``f`` must evaluate a scalar from the store and, as a side effect of the
    evaluation, accumulate its analytic gradients into the store. Returns the
    max over parameter entries of |analytic - central| / max(1, |analytic|).
    On return the store's accumulators hold the analytic gradient.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractViolation(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params.zero_grads()
    base = float(f(params))
    if not np.isfinite(base):
        raise NumericError("objective is not finite at the evaluation point")
    analytic = {name: params.grad(name).copy() for name in params.names()}

    worst = 0.0
    for name in params.names():
        original = params.get(name)
        flat_grad = analytic[name].reshape(-1)
        for idx in range(original.size):
            central = _central_difference(f, params, name, original, idx, eps)
            rel = abs(flat_grad[idx] - central) / max(1.0, abs(flat_grad[idx]))
            worst = max(worst, rel)
        params.set_value(name, original)

    params.zero_grads()
    for name, grad in analytic.items():
        params.accumulate_grad(name, grad)
    return worst


def _central_difference(f, params, name, original, idx, eps) -> float:
    values = []
    for delta in (eps, -eps):
        perturbed = original.data.copy()
        perturbed.reshape(-1)[idx] += delta
        params.set_value(name, Tensor(perturbed))
        value = float(f(params))
        if not np.isfinite(value):
            raise NumericError(f"objective not finite when perturbing {name!r}[{idx}]")
        values.append(value)
    return (values[0] - values[1]) / (2.0 * eps)
