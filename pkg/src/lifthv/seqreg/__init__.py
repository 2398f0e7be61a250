"""Sequence-to-sequence regressor with hand-written forward and backward passes.

A post-norm transformer encoder maps windows of per-frame feature vectors
to per-frame (H, V) estimates.  Everything is plain numpy: parameter
initialization, attention, layer norm, GELU, dropout, the masked-MSE
loss, its analytic gradients, and the AdamW training loop.  A finite
difference checker validates the gradients end to end.
"""

from .model import (
    ModelConfig,
    check_gradients,
    forward,
    init_params,
    masked_mse,
    positional_encoding,
    value_and_grad,
)
from .optim import AdamWConfig, AdamWState, adamw_step, init_adamw
from .train import EpochStats, TrainConfig, TrainResult, evaluate_loss, load_history, save_history, train_model
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig",
    "check_gradients",
    "forward",
    "init_params",
    "masked_mse",
    "positional_encoding",
    "value_and_grad",
    "AdamWConfig",
    "AdamWState",
    "adamw_step",
    "init_adamw",
    "EpochStats",
    "TrainConfig",
    "TrainResult",
    "evaluate_loss",
    "load_history",
    "save_history",
    "train_model",
    "load_checkpoint",
    "save_checkpoint",
]
