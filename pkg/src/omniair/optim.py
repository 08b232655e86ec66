"""Adam optimizer with decoupled weight decay."""

from __future__ import annotations

import logging

import numpy as np

from .autodiff import Tensor

log = logging.getLogger("omniair")


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Weight decay is decoupled: parameters shrink by ``lr * weight_decay``
    before the moment-based update. A step with any non-finite gradient is
    skipped entirely (moments and step counter untouched).
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> bool:
        """Apply one update from the accumulated grads; False if skipped."""
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                log.warning("adam: non-finite gradient in %r, step skipped", name)
                return False
            grads[name] = g
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
