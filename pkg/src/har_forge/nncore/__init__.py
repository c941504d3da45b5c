"""Minimal neural-network core: layers, losses, Adam, checkpoints, gradient checks."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, check_layer, grad_check
from .layers import LayerSpec, make_layer, softmax
from .losses import categorical_cross_entropy, mean_squared_error, one_hot
from .model import Sequential
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "GradCheckReport",
    "LayerSpec",
    "Sequential",
    "adam_step",
    "categorical_cross_entropy",
    "check_layer",
    "grad_check",
    "load_checkpoint",
    "make_layer",
    "mean_squared_error",
    "one_hot",
    "save_checkpoint",
    "softmax",
]
