"""Tensor construction and validation helpers.

A tensor here is a C-contiguous numpy array of finite 32-bit floats (64-bit
only inside the gradient-check harness). These helpers enforce the finiteness
invariant at construction boundaries so the layers can assume it.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def tensor(data, shape=None, dtype=np.float32) -> np.ndarray:
    """Build a finite, contiguous array; raise if any element is NaN/Inf."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if shape is not None:
        if arr.size != int(np.prod(shape)):
            raise DimensionError(
                f"data length {arr.size} does not match shape {tuple(shape)}"
            )
        arr = arr.reshape(shape)
    require_finite("tensor", arr)
    return arr


def require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite values")
