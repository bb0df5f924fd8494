"""Reverse-mode autodiff and the graph mixture-of-experts stability model."""

from .model import (
    TASKS,
    ModelConfig,
    ModelOutput,
    StabilityModel,
    load_balance_loss,
    load_checkpoint,
    moe_combine,
    save_checkpoint,
)
from .tensor import Tensor

__all__ = [
    "TASKS",
    "ModelConfig",
    "ModelOutput",
    "StabilityModel",
    "Tensor",
    "load_balance_loss",
    "load_checkpoint",
    "moe_combine",
    "save_checkpoint",
]
