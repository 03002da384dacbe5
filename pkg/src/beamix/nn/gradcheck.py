"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor


def analytic_gradients(fn: Callable[[], Tensor], params: list[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    fn().backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def numeric_gradients(fn: Callable[[], Tensor], params: list[Tensor], step: float = 1e-5) -> list[np.ndarray]:
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(fn().data)
            flat[i] = orig - step
            f_minus = float(fn().data)
            flat[i] = orig
            g.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * step)
        out.append(g)
    return out


def grad_check(fn: Callable[[], Tensor], params: list[Tensor], step: float = 1e-5,
               floor: float = 1e-12) -> float:
    """Max over all coordinates of |a - n| / max(|a|, |n|, floor).

    ``fn`` must rebuild the graph from the current parameter values on every
    call; parameters are perturbed in place and restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = analytic_gradients(fn, params)
    numeric = numeric_gradients(fn, params, step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
