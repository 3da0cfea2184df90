"""Named layer stacks: forward chaining, backward chaining, parameter dicts."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .layers import Dropout, Layer


class Stack:
    """An ordered sequence of named layers acting as one differentiable unit.

    Parameter and gradient bundles are flat dicts keyed "layername.paramname";
    keys and shapes always mirror each other.
    """

    def __init__(self, layers: list[tuple[str, Layer]]):
        names = [name for name, _ in layers]
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate layer names in stack: {names}")
        self.layers = list(layers)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = x
        for _, layer in self.layers:
            out = layer.forward(out, train=train)
        return out

    def backward(self, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        grad = grad_out
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return self.gradients()

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for pname, value in layer.parameters().items():
                out[f"{name}.{pname}"] = value
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for pname, value in layer.gradients().items():
                out[f"{name}.{pname}"] = value
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        current = self.parameters()
        if set(params) != set(current):
            raise DimensionError(
                f"parameter keys {sorted(params)} do not match stack keys "
                f"{sorted(current)}"
            )
        for key, value in params.items():
            target = current[key]
            if value.shape != target.shape:
                raise DimensionError(
                    f"{key}: shape {value.shape} != expected {target.shape}"
                )
            target[...] = value

    def astype(self, dtype) -> "Stack":
        return Stack([(name, layer.clone(dtype)) for name, layer in self.layers])

    def dropout_layers(self) -> list[Dropout]:
        return [layer for _, layer in self.layers if isinstance(layer, Dropout)]

    def freeze_dropout(self) -> None:
        """Pin every dropout layer to the mask it drew last (for grad checks)."""
        for layer in self.dropout_layers():
            layer.frozen_mask = layer.last_mask
