"""From-scratch differentiable layers, losses, and optimizers."""
from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MaxPool,
    ReLU,
    ResidualBlock,
    Tanh,
)
from .losses import PROB_FLOOR, cross_entropy, softmax, softmax_cross_entropy
from .optim import (
    OPTIMIZER_KINDS,
    SCHEDULE_KINDS,
    SGD,
    Adam,
    make_optimizer,
    scheduled_lr,
)

__all__ = [
    "BatchNorm", "Conv2D", "Dense", "Flatten", "Layer", "MaxPool", "ReLU",
    "ResidualBlock", "Tanh", "PROB_FLOOR", "cross_entropy", "softmax",
    "softmax_cross_entropy", "OPTIMIZER_KINDS", "SCHEDULE_KINDS", "SGD",
    "Adam", "make_optimizer", "scheduled_lr",
]
