"""Complex arithmetic on (real, imaginary) tensor pairs.

The engine itself is real-valued; trainable complex quantities (dictionary
entries, activations, order terms) live as two real tensors and convert to
numpy complex arrays only at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class CTensor:
    re: Tensor
    im: Tensor

    @classmethod
    def constant(cls, z: np.ndarray) -> "CTensor":
        z = np.asarray(z)
        return cls(Tensor(np.ascontiguousarray(z.real, dtype=float)),
                   Tensor(np.ascontiguousarray(z.imag, dtype=float)))

    @classmethod
    def parameter(cls, z: np.ndarray) -> "CTensor":
        z = np.asarray(z)
        return cls(ag.parameter(z.real), ag.parameter(z.imag))

    @property
    def shape(self):
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def __add__(self, other: "CTensor") -> "CTensor":
        if isinstance(other, CTensor):
            return CTensor(self.re + other.re, self.im + other.im)
        return CTensor(self.re + other, self.im)

    def __sub__(self, other: "CTensor") -> "CTensor":
        return CTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other) -> "CTensor":
        if isinstance(other, CTensor):
            return CTensor(self.re * other.re - self.im * other.im,
                           self.re * other.im + self.im * other.re)
        # real scalar or real tensor
        return CTensor(self.re * other, self.im * other)

    __rmul__ = __mul__

    def conj(self) -> "CTensor":
        return CTensor(self.re, -self.im)

    def conj_mul(self, other: "CTensor") -> "CTensor":
        """conj(self) * other without materializing the conjugate."""
        return CTensor(self.re * other.re + self.im * other.im,
                       self.re * other.im - self.im * other.re)

    def abs2(self) -> Tensor:
        return self.re * self.re + self.im * self.im

    def sum(self, axis=None, keepdims=False) -> "CTensor":
        return CTensor(self.re.sum(axis, keepdims), self.im.sum(axis, keepdims))

    def reshape(self, *shape) -> "CTensor":
        return CTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def transpose(self, *axes) -> "CTensor":
        return CTensor(self.re.transpose(*axes), self.im.transpose(*axes))

    def swapaxes(self, a: int, b: int) -> "CTensor":
        return CTensor(self.re.swapaxes(a, b), self.im.swapaxes(a, b))

    def __getitem__(self, index) -> "CTensor":
        return CTensor(self.re[index], self.im[index])

    def matmul(self, other: "CTensor") -> "CTensor":
        rr = ag.matmul(self.re, other.re)
        ii = ag.matmul(self.im, other.im)
        ri = ag.matmul(self.re, other.im)
        ir = ag.matmul(self.im, other.re)
        return CTensor(rr - ii, ri + ir)

    def hermitian(self) -> "CTensor":
        """Conjugate transpose of the last two axes."""
        return CTensor(self.re.swapaxes(-1, -2), -self.im.swapaxes(-1, -2))


def compressed_magnitude(z: CTensor, power: float = 0.5, eps: float = 1e-8) -> Tensor:
    """(|z|^2 + eps)^(power/2); eps keeps the derivative finite at z = 0."""
    return ag.power(z.abs2() + eps, power / 2.0)


def compress(z: CTensor, power: float = 0.5, eps: float = 1e-8) -> CTensor:
    """Phase-preserving magnitude compression, z * (|z|^2 + eps)^((power-1)/2)."""
    scale = ag.power(z.abs2() + eps, (power - 1.0) / 2.0)
    return z * scale
