"""Gradient verification against central finite differences.

The analytic side runs at the dtype under test (float32 is the production
path); the finite-difference reference always runs on a float64 copy of the
model, so the reference itself contributes negligible error. Dropout masks are
frozen across both sides when checking train-mode stacks, making the loss a
deterministic function of the parameters.
"""

from __future__ import annotations

import numpy as np

from .layers import MaxPool1D, ReLU
from .loss import bce_with_logits, bce_with_logits_grad
from .model import Stack

DENOMINATOR_FLOOR = 1e-8


def _mean_loss(model: Stack, x: np.ndarray, targets: np.ndarray, train: bool) -> float:
    logits = np.asarray(model.forward(x, train=train))
    t = np.asarray(targets, dtype=logits.dtype).reshape(logits.shape)
    return float(np.mean(bce_with_logits(logits, t)))


def analytic_gradients(
    model: Stack, x: np.ndarray, targets: np.ndarray, train: bool = False
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward + reverse-mode chain rule; returns (mean loss, gradient bundle)."""
    logits = np.asarray(model.forward(x, train=train))
    t = np.asarray(targets, dtype=logits.dtype).reshape(logits.shape)
    loss = float(np.mean(bce_with_logits(logits, t)))
    grad_logits = bce_with_logits_grad(logits, t) / max(logits.size, 1)
    grads = model.backward(np.asarray(grad_logits, dtype=logits.dtype))
    return loss, grads


def numeric_gradients(
    model: Stack,
    x: np.ndarray,
    targets: np.ndarray,
    epsilon: float,
    train: bool = False,
) -> dict[str, np.ndarray]:
    """Central differences (L(p+e) - L(p-e)) / 2e over every parameter entry."""
    out = {}
    for key, param in model.parameters().items():
        grad = np.zeros(param.shape, dtype=np.float64)
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            plus = _mean_loss(model, x, targets, train)
            flat[i] = original - epsilon
            minus = _mean_loss(model, x, targets, train)
            flat[i] = original
            gflat[i] = (plus - minus) / (2.0 * epsilon)
        out[key] = grad
    return out


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> float:
    """max over entries of |a - n| / max(|a|, |n|, 1e-8)."""
    worst = 0.0
    for key, a in analytic.items():
        n = numeric[key]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOMINATOR_FLOOR)
        worst = max(worst, float(np.max(np.abs(a.astype(np.float64) - n) / denom)))
    return worst


def gradient_check(
    model: Stack,
    x: np.ndarray,
    targets: np.ndarray,
    epsilon: float | None = None,
    dtype=np.float32,
    train: bool = False,
) -> float:
    """Compare every analytic partial of the mean BCE loss to central
    differences; return the maximum relative error.

    dtype selects the precision of the analytic path under test; defaults for
    epsilon are 1e-3 (float32) and 1e-5 (float64).
    """
    dtype = np.dtype(dtype)
    if epsilon is None:
        epsilon = 1e-3 if dtype == np.float32 else 1e-5
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    work = model.astype(dtype)
    xd = np.asarray(x, dtype=dtype)
    if train:
        # Draw masks once on the dtype model, then pin the same masks on both.
        work.forward(xd, train=True)
        work.freeze_dropout()
    _, analytic = analytic_gradients(work, xd, targets, train=train)

    ref = work.astype(np.float64)
    numeric = numeric_gradients(ref, np.asarray(x, dtype=np.float64), targets,
                                epsilon, train=train)
    return max_relative_error(analytic, numeric)


def kink_margin(model, x: np.ndarray, train: bool = False) -> float:
    """Distance from the nearest non-differentiable point along the forward pass.

    Central differences are only trustworthy where the loss is smooth across
    the whole stencil; configurations sitting on a ReLU zero crossing or a
    max-pool tie must be rejected by the harness. Returns the minimum over
    |ReLU preactivation| and pool-window max-vs-runner-up gaps (inf if the
    stack has neither).
    """
    model.forward(x, train=train)
    stack = model.stack if hasattr(model, "stack") else model
    margin = np.inf
    for _, layer in stack.layers:
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.min(np.abs(layer._cache))))
        elif isinstance(layer, MaxPool1D):
            grouped = layer._cache[0]
            if grouped.shape[-1] > 1:
                top2 = np.sort(grouped, axis=-1)[..., -2:]
                # A runner-up clamped at exactly 0 is a locally constant ReLU
                # output; its kink is the preactivation margin counted above.
                live = top2[..., 0] != 0
                if np.any(live):
                    gaps = (top2[..., 1] - top2[..., 0])[live]
                    margin = min(margin, float(np.min(gaps)))
    return margin
