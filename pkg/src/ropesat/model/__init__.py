from .autodiff import OPS, Tape, Tensor, rope_angles
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .network import (
    ModelConfig,
    ModelError,
    ModelParams,
    NonFiniteError,
    ShapeError,
    SparseConfig,
    attention,
    build_sparse_mask,
    forward,
    init_params,
    loss_and_grads,
    mask_density,
    predict,
    predict_logits,
    predict_proba,
    recalibrate_batchnorm,
    softmax,
)
from .train import Adam, OptimizerConfig, TrainingCurves, TrainingDivergedError, evaluate, train


def rope_rotate(x, positions, base: float = 10000.0):
    """Rotate per-token vectors ``x (..., T, d)`` by their positions."""
    import numpy as np

    from .autodiff import OPS as _ops

    x = np.asarray(x, dtype=np.float64)
    out, _ = _ops["rope"][0](x, positions=np.asarray(positions), base=base)
    return out


__all__ = [
    "Adam",
    "CheckpointError",
    "ModelConfig",
    "ModelError",
    "ModelParams",
    "NonFiniteError",
    "OPS",
    "OptimizerConfig",
    "ShapeError",
    "SparseConfig",
    "Tape",
    "Tensor",
    "TrainingCurves",
    "TrainingDivergedError",
    "attention",
    "build_sparse_mask",
    "evaluate",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "mask_density",
    "predict",
    "predict_logits",
    "predict_proba",
    "recalibrate_batchnorm",
    "rope_angles",
    "rope_rotate",
    "save_checkpoint",
    "softmax",
    "train",
]
