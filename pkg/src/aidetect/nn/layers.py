"""Layer forward/backward passes.

Layers accept a single sample or a leading batch axis and remember which was
given so backward mirrors it. Parameterized layers stash their parameter
gradients on `self._grads` during backward; `parameters()`/`gradients()`
expose them by name. Calling backward without a cached forward raises
StateError.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, StateError


class Layer:
    """Common plumbing: cache bookkeeping and the parameter-dict protocol."""

    def __init__(self):
        self._cache = None
        self._grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def gradients(self) -> dict[str, np.ndarray]:
        if self.parameters() and not self._grads:
            raise StateError(f"{type(self).__name__}: backward has not run")
        return self._grads

    def clone(self, dtype=None) -> "Layer":
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}: no cached forward pass")
        return self._cache


def _promote(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    """Add a batch axis if `x` is a single sample of rank `ndim`."""
    x = np.asarray(x)
    if x.ndim == ndim:
        return x[None, ...], False
    if x.ndim == ndim + 1:
        return x, True
    raise DimensionError(f"expected rank {ndim} or {ndim + 1} input, got rank {x.ndim}")


class Dense(Layer):
    """Fully connected map: out = W x + b, W is [n_out, n_in]."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        super().__init__()
        weights = np.asarray(weights)
        bias = np.asarray(bias)
        if weights.ndim != 2 or bias.ndim != 1:
            raise DimensionError(
                f"dense layer needs 2-d weights and 1-d bias, got "
                f"{weights.shape} and {bias.shape}"
            )
        if weights.shape[0] != bias.shape[0]:
            raise DimensionError(
                f"weight rows {weights.shape[0]} != bias length {bias.shape[0]}"
            )
        self.weights = weights
        self.bias = bias

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        xb, batched = _promote(x, 1)
        if xb.shape[1] != self.n_in:
            raise DimensionError(
                f"dense layer expects {self.n_in} inputs, got {xb.shape[1]}"
            )
        self._cache = (xb, batched)
        y = xb @ self.weights.T + self.bias
        return y if batched else y[0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        xb, batched = self._require_cache()
        g, _ = _promote(grad_out, 1)
        self._grads = {"weights": g.T @ xb, "bias": g.sum(axis=0)}
        grad_x = g @ self.weights
        return grad_x if batched else grad_x[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def clone(self, dtype=None) -> "Dense":
        dt = dtype or self.weights.dtype
        return Dense(self.weights.astype(dt), self.bias.astype(dt))


class Conv1D(Layer):
    """1-d cross-correlation with zero padding and per-channel bias.

    kernels: [out_channels, in_channels, kernel_width]; bias: [out_channels].
    """

    def __init__(self, kernels: np.ndarray, bias: np.ndarray, padding: int = 0):
        super().__init__()
        kernels = np.asarray(kernels)
        bias = np.asarray(bias)
        if kernels.ndim != 3 or bias.ndim != 1:
            raise DimensionError(
                f"conv layer needs 3-d kernels and 1-d bias, got "
                f"{kernels.shape} and {bias.shape}"
            )
        if kernels.shape[0] != bias.shape[0]:
            raise DimensionError(
                f"kernel out-channels {kernels.shape[0]} != bias length {bias.shape[0]}"
            )
        if padding < 0:
            raise DimensionError(f"padding must be non-negative, got {padding}")
        self.kernels = kernels
        self.bias = bias
        self.padding = padding

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def kernel_width(self) -> int:
        return self.kernels.shape[2]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        xb, batched = _promote(x, 2)
        if xb.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv layer expects {self.in_channels} input channels, "
                f"got {xb.shape[1]}"
            )
        length = xb.shape[2]
        l_out = length + 2 * self.padding - self.kernel_width + 1
        if l_out <= 0:
            raise DimensionError(
                f"input too short: length {length} with padding {self.padding} "
                f"gives no output for kernel width {self.kernel_width}"
            )
        padded = np.pad(xb, ((0, 0), (0, 0), (self.padding, self.padding)))
        # windows: [B, C_in, L_out, K]
        windows = np.lib.stride_tricks.sliding_window_view(
            padded, self.kernel_width, axis=2
        )
        y = np.einsum("bclk,ock->bol", windows, self.kernels, optimize=True)
        y += self.bias[:, None]
        self._cache = (windows, xb.shape, batched)
        return y if batched else y[0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        windows, x_shape, batched = self._require_cache()
        g, _ = _promote(grad_out, 2)
        self._grads = {
            "kernels": np.einsum("bol,bclk->ock", g, windows, optimize=True),
            "bias": g.sum(axis=(0, 2)),
        }
        # grad wrt padded input is the full correlation of grad_out with the
        # kernels reversed along the width axis.
        k = self.kernel_width
        g_padded = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1)))
        g_windows = np.lib.stride_tricks.sliding_window_view(g_padded, k, axis=2)
        flipped = self.kernels[:, :, ::-1]
        grad_padded = np.einsum("bolk,ock->bcl", g_windows, flipped, optimize=True)
        p = self.padding
        grad_x = grad_padded[:, :, p : p + x_shape[2]]
        return grad_x if batched else grad_x[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "bias": self.bias}

    def clone(self, dtype=None) -> "Conv1D":
        dt = dtype or self.kernels.dtype
        return Conv1D(self.kernels.astype(dt), self.bias.astype(dt), self.padding)


class MaxPool1D(Layer):
    """Non-overlapping max pooling; trailing remainder elements are dropped."""

    def __init__(self, window: int = 2):
        super().__init__()
        if window < 1:
            raise DimensionError(f"pool window must be positive, got {window}")
        self.window = window

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        xb, batched = _promote(x, 2)
        length = xb.shape[2]
        if length < self.window:
            raise DimensionError(
                f"input too short: length {length} < pool window {self.window}"
            )
        l_out = length // self.window
        trimmed = xb[:, :, : l_out * self.window]
        grouped = trimmed.reshape(xb.shape[0], xb.shape[1], l_out, self.window)
        idx = grouped.argmax(axis=3)
        pooled = np.take_along_axis(grouped, idx[..., None], axis=3)[..., 0]
        self._cache = (grouped, idx, xb.shape, batched)
        return pooled if batched else pooled[0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        _, idx, x_shape, batched = self._require_cache()
        g, _ = _promote(grad_out, 2)
        b, c, length = x_shape
        l_out = idx.shape[2]
        grad_grouped = np.zeros((b, c, l_out, self.window), dtype=g.dtype)
        np.put_along_axis(grad_grouped, idx[..., None], g[..., None], axis=3)
        grad_x = np.zeros(x_shape, dtype=g.dtype)
        grad_x[:, :, : l_out * self.window] = grad_grouped.reshape(b, c, -1)
        return grad_x if batched else grad_x[0]

    def argmax_indices(self) -> np.ndarray:
        """Window-relative argmax positions retained from the last forward."""
        _, idx, _, batched = self._require_cache()
        return idx if batched else idx[0]

    def clone(self, dtype=None) -> "MaxPool1D":
        return MaxPool1D(self.window)


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x)
        self._cache = x
        return np.maximum(x, 0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._require_cache()
        return np.asarray(grad_out) * (x > 0)

    def clone(self, dtype=None) -> "ReLU":
        return ReLU()


class Dropout(Layer):
    """Inverted dropout: zero with probability `rate` and scale survivors by
    1/(1-rate) at train time, so eval mode is the identity.

    The mask sequence is reproducible from `seed`; `frozen_mask` pins the next
    train-mode forwards to a fixed mask (used by the gradient-check harness).
    """

    def __init__(self, rate: float, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise DimensionError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.frozen_mask: np.ndarray | None = None
        self.last_mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x)
        if not train or self.rate == 0.0:
            self._cache = (None, False)
            return x
        if self.frozen_mask is not None:
            mask = self.frozen_mask
            if mask.shape != x.shape:
                raise DimensionError(
                    f"frozen dropout mask shape {mask.shape} != input {x.shape}"
                )
        else:
            mask = self.rng.random(x.shape) >= self.rate
        self.last_mask = mask
        scale = 1.0 / (1.0 - self.rate)
        self._cache = (mask, True)
        return x * (mask.astype(x.dtype) * scale)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        mask, dropped = self._require_cache()
        g = np.asarray(grad_out)
        if not dropped:
            return g
        scale = 1.0 / (1.0 - self.rate)
        return g * (mask.astype(g.dtype) * scale)

    def clone(self, dtype=None) -> "Dropout":
        copy = Dropout(self.rate, self.seed)
        copy.frozen_mask = self.frozen_mask
        return copy


class Flatten(Layer):
    """Collapse a rank-`input_rank` sample into one axis (batch axis kept)."""

    def __init__(self, input_rank: int = 2):
        super().__init__()
        self.input_rank = input_rank

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        xb, batched = _promote(x, self.input_rank)
        self._cache = (xb.shape, batched)
        flat = xb.reshape(xb.shape[0], -1)
        return flat if batched else flat[0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        shape, batched = self._require_cache()
        g = np.asarray(grad_out).reshape(shape)
        return g if batched else g[0]

    def clone(self, dtype=None) -> "Flatten":
        return Flatten(self.input_rank)
