"""Layers: dense, 2-D convolution, gated recurrent cell, dropout.

Parameters initialize with uniform fan-in scaling U(-1/sqrt(fan_in), +1/sqrt(fan_in))
from an explicit rng, so models are reproducible given their seed.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from cascadet.neuralkit.tensor import Tensor, conv2d, matmul, sigmoid, tanh


class Module:
    """Base class: recursive parameter collection and train/eval mode."""

    def __init__(self) -> None:
        self.training = True

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def walk(obj: "Module", prefix: str) -> None:
            for name, value in vars(obj).items():
                if isinstance(value, Tensor):
                    out[prefix + name] = value
                elif isinstance(value, Module):
                    walk(value, f"{prefix}{name}.")
                elif isinstance(value, (list, tuple)):
                    for i, item in enumerate(value):
                        if isinstance(item, Tensor):
                            out[f"{prefix}{name}.{i}"] = item
                        elif isinstance(item, Module):
                            walk(item, f"{prefix}{name}.{i}.")

        walk(self, "")
        return out

    def modules(self) -> list["Module"]:
        found = [self]
        for value in vars(self).values():
            if isinstance(value, Module):
                found.extend(value.modules())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        found.extend(item.modules())
        return found

    def train_mode(self) -> None:
        for m in self.modules():
            m.training = True

    def eval_mode(self) -> None:
        for m in self.modules():
            m.training = False

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ValueError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: shape {arr.shape} != expected {p.data.shape}"
                )
            p.data = arr.copy()
            p.grad = None


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = _uniform_fan_in(rng, in_features, (in_features, out_features))
        self.bias = _uniform_fan_in(rng, in_features, (out_features,))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _uniform_fan_in(
            rng, fan_in, (out_channels, in_channels, kernel_size, kernel_size)
        )
        self.bias = _uniform_fan_in(rng, fan_in, (out_channels,))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GRUCell(Module):
    """Single gated recurrent cell: h' = (1-z)*n + z*h."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.hidden_size = hidden_size
        self.w_xz = _uniform_fan_in(rng, input_size, (input_size, hidden_size))
        self.w_hz = _uniform_fan_in(rng, hidden_size, (hidden_size, hidden_size))
        self.b_z = _uniform_fan_in(rng, hidden_size, (hidden_size,))
        self.w_xr = _uniform_fan_in(rng, input_size, (input_size, hidden_size))
        self.w_hr = _uniform_fan_in(rng, hidden_size, (hidden_size, hidden_size))
        self.b_r = _uniform_fan_in(rng, hidden_size, (hidden_size,))
        self.w_xn = _uniform_fan_in(rng, input_size, (input_size, hidden_size))
        self.w_hn = _uniform_fan_in(rng, hidden_size, (hidden_size, hidden_size))
        self.b_n = _uniform_fan_in(rng, hidden_size, (hidden_size,))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(matmul(x, self.w_xz) + matmul(h, self.w_hz) + self.b_z)
        r = sigmoid(matmul(x, self.w_xr) + matmul(h, self.w_hr) + self.b_r)
        n = tanh(matmul(x, self.w_xn) + r * matmul(h, self.w_hn) + self.b_n)
        return (1.0 - z) * n + z * h

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden_size)))


class Dropout(Module):
    """Inverted dropout; identity in eval mode. Draws masks from the given rng."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.data.shape) < keep) / keep
        return x * Tensor(mask)
