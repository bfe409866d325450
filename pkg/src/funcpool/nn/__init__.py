"""Minimal float64 dense-network engine."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckResult, grad_check
from .losses import bce_loss, label_smooth, mixup, one_hot, smoothed_ce_loss
from .network import (
    LayerNorm,
    Linear,
    Network,
    ReLU,
    Residual,
    SigmoidHead,
    SoftmaxHead,
    sigmoid,
    softmax,
)
from .optim import AdamW

__all__ = [
    "AdamW",
    "GradCheckResult",
    "LayerNorm",
    "Linear",
    "Network",
    "ReLU",
    "Residual",
    "SigmoidHead",
    "SoftmaxHead",
    "bce_loss",
    "grad_check",
    "label_smooth",
    "load_checkpoint",
    "mixup",
    "one_hot",
    "save_checkpoint",
    "sigmoid",
    "smoothed_ce_loss",
    "softmax",
]
