"""Central-finite-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from cascadet.neuralkit.tensor import Tensor

# Relative error uses a small absolute floor in the denominator so that
# near-zero gradients are checked at an absolute scale well above the
# finite-difference noise floor (~1e-10 at h=1e-5 in float64).
_DENOM_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    tolerance: float
    per_param: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare autodiff gradients of loss_fn against central finite differences.

    loss_fn must be deterministic (fix any dropout/rng before calling) and
    return a scalar Tensor; every element of every parameter is perturbed.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    if loss.data.size != 1 or not np.isfinite(loss.data):
        raise ValueError("loss_fn must return a finite scalar")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    if any(not np.all(np.isfinite(g)) for g in analytic.values()):
        raise ValueError("autodiff produced a non-finite gradient")

    per_param: dict[str, float] = {}
    worst = 0.0
    worst_name = ""
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), _DENOM_FLOOR)
        rel = float(np.max(np.abs(a - fd) / denom)) if flat.size else 0.0
        per_param[name] = rel
        if rel > worst:
            worst = rel
            worst_name = name
    return GradCheckReport(
        max_rel_error=worst, worst_param=worst_name, tolerance=tolerance, per_param=per_param
    )
