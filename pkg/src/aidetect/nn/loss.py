"""Binary cross-entropy on logits, in the numerically stable fused form."""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    """Stable logistic function; never overflows for finite input."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _check_targets(targets: np.ndarray) -> None:
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must be 0 or 1")


def bce_with_logits(logits, targets):
    """loss = max(x, 0) - t*x + log(1 + exp(-|x|)), elementwise.

    Equals softplus(x) - t*x but stays finite for any |x|.
    """
    x = np.asarray(logits, dtype=np.float64 if np.isscalar(logits) else None)
    t = np.asarray(targets, dtype=x.dtype)
    _check_targets(t)
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return loss if loss.ndim else float(loss)


def bce_with_logits_grad(logits, targets):
    """d loss / d logit = sigmoid(logit) - target, elementwise."""
    x = np.asarray(logits, dtype=np.float64 if np.isscalar(logits) else None)
    t = np.asarray(targets, dtype=x.dtype)
    _check_targets(t)
    g = sigmoid(x) - t
    return g if np.ndim(g) else float(g)
