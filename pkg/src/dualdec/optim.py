"""AdamW optimizer over a named parameter dict."""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class AdamW:
    """Adam with decoupled weight decay.

    Parameters are updated in place, in sorted-name order, so a run is
    bit-reproducible given identical gradients.  Moment arrays live in
    ``state`` keyed by parameter name and can be serialized alongside a
    checkpoint.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.state: dict[str, dict[str, np.ndarray]] = {
            name: {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
            for name, p in sorted(params.items())
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                raise UsageError(f"optimizer step: parameter '{name}' has no gradient")
            g = p.grad.astype(p.data.dtype, copy=False)
            st = self.state[name]
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * (g * g)
            m_hat = st["m"] / bc1
            v_hat = st["v"] / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype, copy=False)
