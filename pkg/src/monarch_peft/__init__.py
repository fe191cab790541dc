"""Rectangular Monarch matrices as parameter-efficient adapters.

The public surface re-exports the pieces most users need: the config and
adapter types, batched application and dense materialization, merging,
gradients, dense-to-Monarch projection, the bound verifiers, and the
desk-scale training harness.
"""

from .core import (
    AdapterLayer,
    MonarchAdapter,
    MonarchConfig,
    apply,
    apply_flops,
    dense_flops,
    init_adapter,
    load_checkpoint,
    lora_param_count,
    merge,
    monarch_rank,
    param_count,
    random_adapter,
    save_checkpoint,
    shuffle_p1,
    shuffle_p2,
    to_dense,
)
from .errors import NumericalError, StructuralError
from .gradients import AdapterGrads, backward, grad_check, mse_loss, softmax_xent_loss
from .harness import (
    Adam,
    LoraAdapter,
    RunRecord,
    TrainConfig,
    make_planted_task,
    sweep,
    train,
    weight_stats,
)
from .numerics import (
    SvdResult,
    as_matrix,
    as_vector,
    fro_norm_sq,
    matmul,
    numerical_rank,
    spectral_norm,
    svd,
    truncated_svd,
)
from .projection import ChannelSet, ProjectionReport, channel_set, permuted_block, project, worst_case_instance
from .theory import (
    BoundReport,
    EstimationErrorReport,
    check_corollary_spectral,
    check_estimation_error,
    check_lemma_submatrix,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterGrads",
    "AdapterLayer",
    "Adam",
    "BoundReport",
    "ChannelSet",
    "EstimationErrorReport",
    "LoraAdapter",
    "MonarchAdapter",
    "MonarchConfig",
    "NumericalError",
    "ProjectionReport",
    "RunRecord",
    "StructuralError",
    "SvdResult",
    "TrainConfig",
    "apply",
    "apply_flops",
    "as_matrix",
    "as_vector",
    "backward",
    "channel_set",
    "check_corollary_spectral",
    "check_estimation_error",
    "check_lemma_submatrix",
    "dense_flops",
    "fro_norm_sq",
    "grad_check",
    "init_adapter",
    "load_checkpoint",
    "lora_param_count",
    "make_planted_task",
    "matmul",
    "merge",
    "monarch_rank",
    "mse_loss",
    "numerical_rank",
    "param_count",
    "permuted_block",
    "project",
    "random_adapter",
    "save_checkpoint",
    "shuffle_p1",
    "shuffle_p2",
    "softmax_xent_loss",
    "spectral_norm",
    "svd",
    "sweep",
    "to_dense",
    "train",
    "truncated_svd",
    "weight_stats",
    "worst_case_instance",
]
