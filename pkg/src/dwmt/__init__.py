"""Dynamic task weighting for multi-task training at desk scale.

A shared trunk feeds per-task branches; a softmax head over the shared
features emits one weight per task and is trained by its own objective so
that the currently hardest task always gets priority. The package bundles
the numeric core, the losses, the weight generator, a toy network, the
dual-update trainer, synthetic task data, verification metrics, and a CLI.
"""

from .core import (
    ArgumentError,
    ContractViolation,
    DimensionError,
    NumericError,
    ParamStore,
    Tensor,
    grad_check,
    matmul,
    softmax_stable,
)
from .data import DatasetSpec, TaskBatch, TaskDataset, TaskSpec, make_tasks
from .losses import (
    CenterBank,
    LossConfig,
    center_loss,
    cross_entropy,
    total_multitask_loss,
    update_centers,
    verification_loss,
)
from .metrics import (
    EmbeddingSet,
    best_verification_threshold,
    rank_k_identification,
    val_at_far,
    verify_pairs,
)
from .network import (
    MultiTaskNet,
    NetConfig,
    degenerate_single_task,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .trainer import (
    Trainer,
    TrainerConfig,
    TrainingDiverged,
    TrainingTrace,
    naive_dynamic_update,
    task_accuracy,
    train,
    write_trace_csv,
)
from .weights import (
    GradMode,
    WeightGenerator,
    closed_form_projection,
    generate_weights,
    generator_gradient,
    two_task_weight_ratio,
    weight_update_loss,
)

__version__ = "0.1.0"
