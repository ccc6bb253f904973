"""Hard-parameter-sharing network: one fully connected trunk feeding T task
branches, each with a hidden layer, a bottleneck embedding, and a softmax
classifier head. All branches share the same shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import core
from .core import ArgumentError, DimensionError, Node, ParamStore, Tensor
from .losses import CenterBank, LossConfig, cross_entropy, total_multitask_loss, verification_loss

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "NetConfig",
    "MultiTaskNet",
    "SingleTaskView",
    "parameter_count",
    "degenerate_single_task",
    "task_loss_graph",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"DWMT"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"relu": core.relu, "tanh": core.tanh}


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    trunk_layers: tuple[int, ...]
    embed_dim: int
    classes_per_task: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "trunk_layers", tuple(int(w) for w in self.trunk_layers))
        object.__setattr__(self, "classes_per_task", tuple(int(k) for k in self.classes_per_task))
        if self.input_dim < 1 or self.embed_dim < 1:
            raise ArgumentError("input_dim and embed_dim must be >= 1")
        if not self.trunk_layers or any(w < 1 for w in self.trunk_layers):
            raise ArgumentError(f"trunk_layers must be positive widths, got {self.trunk_layers}")
        if len(self.classes_per_task) < 2 or any(k < 1 for k in self.classes_per_task):
            raise ArgumentError(f"need >= 2 tasks with >= 1 classes, got {self.classes_per_task}")
        if self.activation not in _ACTIVATIONS:
            raise ArgumentError(f"activation must be one of {sorted(_ACTIVATIONS)}")

    @property
    def task_count(self) -> int:
        return len(self.classes_per_task)

    @property
    def shared_dim(self) -> int:
        """Width of the trunk output consumed by branches and the weight head."""
        return self.trunk_layers[-1]


def parameter_count(cfg: NetConfig) -> int:
    """Exact parameter count implied by a configuration."""
    total = 0
    fan_in = cfg.input_dim
    for width in cfg.trunk_layers:
        total += fan_in * width + width
        fan_in = width
    d = cfg.shared_dim
    for classes in cfg.classes_per_task:
        total += d * d + d                     # branch hidden layer
        total += d * cfg.embed_dim + cfg.embed_dim  # bottleneck embedding
        total += cfg.embed_dim * classes + classes  # classifier head
    return total


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MultiTaskNet:
    """Trunk plus branches over a single parameter store."""

    def __init__(self, cfg: NetConfig, seed: int):
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        fan_in = cfg.input_dim
        for i, width in enumerate(cfg.trunk_layers):
            self.store.add(f"trunk.{i}.w", _xavier(rng, fan_in, width))
            self.store.add(f"trunk.{i}.b", np.zeros(width))
            fan_in = width
        d = cfg.shared_dim
        for t, classes in enumerate(cfg.classes_per_task):
            self.store.add(f"branch{t}.hidden.w", _xavier(rng, d, d))
            self.store.add(f"branch{t}.hidden.b", np.zeros(d))
            self.store.add(f"branch{t}.embed.w", _xavier(rng, d, cfg.embed_dim))
            self.store.add(f"branch{t}.embed.b", np.zeros(cfg.embed_dim))
            self.store.add(f"branch{t}.head.w", _xavier(rng, cfg.embed_dim, classes))
            self.store.add(f"branch{t}.head.b", np.zeros(classes))

    def _linear(self, x: Node, name: str) -> Node:
        w = core.param(self.store, f"{name}.w")
        b = core.param(self.store, f"{name}.b")
        return core.add_bias(core.matmul(x, w), b)

    def shared_graph(self, x) -> Node:
        """Trunk activations as a graph node; input is [batch x input_dim]."""
        node = core.as_node(x)
        if node.value.ndim != 2 or node.shape[1] != self.cfg.input_dim:
            raise DimensionError(
                f"input must be [batch x {self.cfg.input_dim}], got shape {node.shape}"
            )
        act = _ACTIVATIONS[self.cfg.activation]
        for i in range(len(self.cfg.trunk_layers)):
            node = act(self._linear(node, f"trunk.{i}"))
        return node

    def task_graph(self, z: Node, task_id: int) -> tuple[Node, Node]:
        """Branch logits and bottleneck embeddings for one task."""
        self._check_task(task_id)
        act = _ACTIVATIONS[self.cfg.activation]
        hidden = act(self._linear(z, f"branch{task_id}.hidden"))
        embed = self._linear(hidden, f"branch{task_id}.embed")
        logits = self._linear(embed, f"branch{task_id}.head")
        return logits, embed

    def forward_shared(self, x) -> Tensor:
        return self.shared_graph(x).tensor

    def forward_task(self, z, task_id: int) -> tuple[Tensor, Tensor]:
        logits, embed = self.task_graph(core.as_node(z), task_id)
        return logits.tensor, embed.tensor

    def task_output(self, x, task_id: int) -> tuple[Tensor, Tensor]:
        """Full pass input -> (logits, embeddings), values only."""
        logits, embed = self.task_graph(self.shared_graph(x), task_id)
        return logits.tensor, embed.tensor

    def param_count(self) -> int:
        return self.store.param_count()

    def load_values(self, mapping: dict[str, Tensor]) -> None:
        missing = set(self.store.names()) - set(mapping)
        extra = set(mapping) - set(self.store.names())
        if missing or extra:
            raise ArgumentError(
                f"checkpoint does not match the network: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for name, tensor in mapping.items():
            self.store.set_value(name, tensor)

    def _check_task(self, task_id: int) -> None:
        if not (0 <= task_id < self.cfg.task_count):
            raise ArgumentError(f"task_id must lie in [0, {self.cfg.task_count}), got {task_id}")


def task_loss_graph(net: MultiTaskNet, task_id: int, batch, bank: CenterBank,
                    loss_cfg: LossConfig) -> tuple[Node, Node, Node, Node]:
    """Per-task loss over a batch: (loss, logits, embeddings, shared) nodes.

    Task 0 is the verification task and carries the center term; the other
    tasks use plain cross-entropy.
    """
    z = net.shared_graph(batch.x)
    logits, embed = net.task_graph(z, task_id)
    if task_id == 0:
        loss = verification_loss(logits, batch.labels, embed, bank, loss_cfg)
    else:
        loss = cross_entropy(logits, batch.labels)
    return loss, logits, embed, z


class SingleTaskView:
    """One task's loss path over the shared parameters (no copying).

    Its loss graph is exactly the multi-task total evaluated at a one-hot
    weight vector, so gradients agree with the full system bit for bit.
    """

    def __init__(self, net: MultiTaskNet, task_id: int):
        self.net = net
        self.task_id = task_id

    def loss_graph(self, batch, bank: CenterBank, loss_cfg: LossConfig) -> Node:
        loss, _, _, _ = task_loss_graph(self.net, self.task_id, batch, bank, loss_cfg)
        return total_multitask_loss([loss], [1.0])


def degenerate_single_task(net: MultiTaskNet, task_id: int) -> SingleTaskView:
    """View of the multi-task system at weight 1 on one task, 0 elsewhere."""
    net._check_task(task_id)
    return SingleTaskView(net, task_id)


# --------------------------------------------------------------------------
# checkpoint format: magic, u32 version, then per parameter (sorted by name)
# u32 name length, name bytes, u32 rank, u32 dims..., float64 row-major values.
# All integers and floats little-endian.
# --------------------------------------------------------------------------

def save_checkpoint(store: ParamStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name in sorted(store.names()):
            data = store.get(name).data
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ArgumentError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ArgumentError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    out: dict[str, Tensor] = {}
    while offset < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        out[name] = Tensor(values.reshape(dims))
    return out
