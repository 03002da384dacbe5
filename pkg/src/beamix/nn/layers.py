"""Dense layers and a tiny module system for collecting parameters."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = {
    "linear": lambda x: x,
    "tanh": ag.tanh,
    "sigmoid": ag.sigmoid,
}


class Module:
    """Parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif hasattr(value, "re") and hasattr(value, "im"):
        yield from _walk(value.re, name + ".re")
        yield from _walk(value.im, name + ".im")


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class Dense(Module):
    """y = act(x W^T + b) for inputs shaped (..., in)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "linear",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = ag.parameter(glorot_uniform(rng, n_in, n_out))
        self.bias = ag.parameter(np.zeros(n_out))
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.weight.transpose()) + self.bias
        return ACTIVATIONS[self.activation](y)

    def describe(self) -> dict:
        n_out, n_in = self.weight.shape
        return {"in": n_in, "out": n_out, "activation": self.activation}


class MLP(Module):
    def __init__(self, sizes: list[int], hidden_activation: str = "tanh",
                 out_activation: str = "linear", rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [
            Dense(a, b, hidden_activation if i < len(sizes) - 2 else out_activation, rng)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def zero_output(self) -> None:
        last = self.layers[-1]
        last.weight.data[...] = 0.0
        last.bias.data[...] = 0.0

    def describe(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]
