"""Minimal numpy-backed tensor autodiff, layers, optimizer, and training loop."""

from cascadet.neuralkit.tensor import (
    Tensor,
    concat,
    conv2d,
    cross_entropy,
    log,
    matmul,
    mean,
    relu,
    sigmoid,
    softmax,
    stack,
    tanh,
)
from cascadet.neuralkit.layers import Conv2d, Dense, Dropout, GRUCell, Module
from cascadet.neuralkit.optim import AdamW, cosine_lr
from cascadet.neuralkit.gradcheck import GradCheckReport, grad_check
from cascadet.neuralkit.training import (
    TrainConfig,
    TrainingDivergedError,
    TrainingHistory,
    train_with_early_stopping,
)
from cascadet.neuralkit.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AdamW",
    "Conv2d",
    "Dense",
    "Dropout",
    "GRUCell",
    "GradCheckReport",
    "Module",
    "Tensor",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainingHistory",
    "concat",
    "conv2d",
    "cosine_lr",
    "cross_entropy",
    "grad_check",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
    "train_with_early_stopping",
]
