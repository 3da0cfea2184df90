"""From-scratch numerical core: layers, loss, optimizer, gradient verification.

Single-threaded, numpy-backed, float32 by default. Every layer caches what its
backward pass needs during forward; `Stack` composes layers and aggregates
named parameter gradients.
"""

from .tensor import tensor, require_finite
from .layers import Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU
from .loss import bce_with_logits, bce_with_logits_grad, sigmoid
from .model import Stack
from .optim import Adam
from .gradcheck import (
    analytic_gradients,
    gradient_check,
    kink_margin,
    max_relative_error,
    numeric_gradients,
)

__all__ = [
    "Adam",
    "Conv1D",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool1D",
    "ReLU",
    "Stack",
    "analytic_gradients",
    "bce_with_logits",
    "bce_with_logits_grad",
    "gradient_check",
    "kink_margin",
    "max_relative_error",
    "numeric_gradients",
    "require_finite",
    "sigmoid",
    "tensor",
]
