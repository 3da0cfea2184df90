"""Adam with bias correction; lr 1e-3 and conventional betas by default."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


class Adam:
    """Holds per-parameter first/second moment accumulators and the step count.

    `step` mutates the parameter arrays in place. Accumulators are created on
    first use, mirroring the parameter shapes exactly; step_count increments by
    one per call.
    """

    def __init__(
        self,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError(f"betas must be in (0,1), got {beta1}, {beta2}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment: dict[str, np.ndarray] | None = None
        self.second_moment: dict[str, np.ndarray] | None = None

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if set(params) != set(grads):
            raise DimensionError(
                f"gradient keys {sorted(grads)} do not match parameter keys "
                f"{sorted(params)}"
            )
        if self.first_moment is None:
            self.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
            self.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for key, p in params.items():
            g = grads[key]
            if g.shape != p.shape:
                raise DimensionError(
                    f"{key}: gradient shape {g.shape} != parameter shape {p.shape}"
                )
            m = self.first_moment[key]
            v = self.second_moment[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.epsilon)
