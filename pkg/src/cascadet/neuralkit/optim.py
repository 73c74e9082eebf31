"""Decoupled-weight-decay adaptive optimizer with cosine annealing."""

from __future__ import annotations

import math

import numpy as np

from cascadet.neuralkit.tensor import Tensor


def cosine_lr(base_lr: float, step: int, horizon: int) -> float:
    """Cosine schedule from base_lr at step 0 down to 0 at the horizon."""
    if horizon <= 0:
        return base_lr
    frac = min(step, horizon) / horizon
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adam with decoupled weight decay; lr follows cosine annealing when a
    horizon (total step count) is given."""

    def __init__(
        self,
        params: dict[str, Tensor],
        base_lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
        horizon: int | None = None,
    ):
        self.params = dict(params)
        self.base_lr = base_lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.horizon = horizon
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    @property
    def current_lr(self) -> float:
        if self.horizon is None:
            return self.base_lr
        return cosine_lr(self.base_lr, self.step_count, self.horizon)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        lr = self.current_lr
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= lr * update + lr * self.weight_decay * p.data
