"""Registered gradient checks: every differentiable op plus an end-to-end model.

Each check builds a scalar ``sum(weights * op(inputs))`` with fixed random
weights, so every output coordinate contributes an O(1) gradient, and compares
the analytic gradient against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import autograd as ag
from .nn.cplx import CTensor, compress, compressed_magnitude
from .nn.gradcheck import grad_check
from .nn.layers import MLP, Dense

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)


def _weighted(out: ag.Tensor, w: np.ndarray) -> ag.Tensor:
    return (out * ag.tensor(w)).sum()


def _case(rng: np.random.Generator, op: Callable, *shapes, positive: bool = False):
    """Returns (loss closure, params) for ``op`` applied to fresh parameters."""
    params = []
    for s in shapes:
        x = rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s)
        params.append(ag.parameter(x))
    out_shape = op(*params).shape
    w = rng.standard_normal(out_shape)
    return (lambda: _weighted(op(*params), w)), params


def _complex_case(rng: np.random.Generator, op: Callable, *shapes):
    ctens = [CTensor.parameter(rng.standard_normal(s) + 1j * rng.standard_normal(s)) for s in shapes]
    params = [t for c in ctens for t in (c.re, c.im)]
    probe = op(*ctens)
    if isinstance(probe, CTensor):
        wr, wi = rng.standard_normal(probe.shape), rng.standard_normal(probe.shape)

        def fn():
            o = op(*ctens)
            return _weighted(o.re, wr) + _weighted(o.im, wi)
    else:
        w = rng.standard_normal(probe.shape)

        def fn():
            return _weighted(op(*ctens), w)
    return fn, params


def _op_cases(rng: np.random.Generator) -> dict[str, tuple]:
    dense = Dense(4, 3, "tanh", rng)
    mlp = MLP([4, 5, 5, 2], rng=rng)
    mlp.layers[-1].weight.data[:] = rng.standard_normal(mlp.layers[-1].weight.shape) * 0.5
    x_in = rng.standard_normal((6, 4))
    cases = {
        "add": _case(rng, ag.add, (3, 4), (3, 4)),
        "add_broadcast": _case(rng, ag.add, (3, 4), (4,)),
        "sub": _case(rng, ag.sub, (3, 4), (1, 4)),
        "mul": _case(rng, ag.mul, (3, 4), (3, 1)),
        "div": _case(rng, ag.div, (3, 4), (3, 4), positive=True),
        "neg": _case(rng, ag.neg, (5,)),
        "power": _case(rng, lambda a: ag.power(a, 1.7), (3, 4), positive=True),
        "tanh": _case(rng, ag.tanh, (3, 4)),
        "sigmoid": _case(rng, ag.sigmoid, (3, 4)),
        "exp": _case(rng, ag.exp, (3, 4)),
        "log": _case(rng, ag.log, (3, 4), positive=True),
        "sqrt": _case(rng, ag.sqrt, (3, 4), positive=True),
        "square": _case(rng, ag.square, (3, 4)),
        "sum_axis": _case(rng, lambda a: ag.sum_(a, axis=1, keepdims=True), (3, 4)),
        "mean": _case(rng, lambda a: ag.mean(a, axis=0), (3, 4)),
        "reshape": _case(rng, lambda a: ag.reshape(a, (4, 3)), (3, 4)),
        "transpose": _case(rng, lambda a: ag.transpose(a, (2, 0, 1)), (2, 3, 4)),
        "getitem_slice": _case(rng, lambda a: a[1:, ::2], (3, 4)),
        "getitem_fancy": _case(rng, lambda a: a[np.array([0, 2, 0])], (3, 4)),
        "concat": _case(rng, lambda a, b: ag.concat([a, b], axis=1), (3, 2), (3, 4)),
        "stack": _case(rng, lambda a, b: ag.stack([a, b], axis=0), (3, 4), (3, 4)),
        "shift": _case(rng, lambda a: ag.shift(a, 2, axis=1), (3, 5)),
        "matmul": _case(rng, ag.matmul, (3, 4), (4, 2)),
        "matmul_batched": _case(rng, ag.matmul, (2, 3, 4), (4, 5)),
        "complex_mul": _complex_case(rng, lambda a, b: a * b, (3, 4), (3, 4)),
        "complex_conj_mul": _complex_case(rng, lambda a, b: a.conj_mul(b), (3, 4), (3, 4)),
        "complex_abs2": _complex_case(rng, lambda a: a.abs2(), (3, 4)),
        "complex_matmul": _complex_case(rng, lambda a, b: a.matmul(b), (2, 3, 4), (4, 2)),
        "complex_hermitian": _complex_case(rng, lambda a: a.hermitian(), (3, 4)),
        "compress": _complex_case(rng, lambda a: compress(a, 0.5), (3, 4)),
        "compressed_magnitude": _complex_case(rng, lambda a: compressed_magnitude(a, 0.5), (3, 4)),
    }
    # relu is checked away from its kink
    xr = ag.parameter(np.sign(rng.standard_normal((3, 4))) * rng.uniform(0.2, 1.0, (3, 4)))
    wr = rng.standard_normal((3, 4))
    cases["relu"] = ((lambda: _weighted(ag.relu(xr), wr)), [xr])
    wd = rng.standard_normal((6, 3))
    cases["dense"] = ((lambda: _weighted(dense(ag.tensor(x_in)), wd)), dense.parameters())
    wm = rng.standard_normal((6, 2))
    cases["mlp"] = ((lambda: _weighted(mlp(ag.tensor(x_in)), wm)), mlp.parameters())
    return cases


def op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [CheckResult(name, grad_check(fn, params), OP_TOLERANCE)
            for name, (fn, params) in _op_cases(rng).items()]


def micro_model(seed: int = 0, regime: str = "full-raw", Q: int = 3):
    """A tiny Taylor model (L = 3 frames, K = 9 bins, M = 4 mics, P = 6 beams)
    with randomized weights, plus a random input and target."""
    from .array import circular_array
    from .stft import StftConfig
    from .taylor import TaylorConfig, build_model

    rng = np.random.default_rng(seed)
    geom = circular_array(0.0425, 3, with_center=True)
    stft_cfg = StftConfig(win_len=16, hop=8, fft_size=16)
    cfg = TaylorConfig(Q=Q, P=6, hidden_width=3, hidden_layers=1, frames_context=1, regime=regime, seed=seed)
    model = build_model(geom, cfg, stft_cfg)
    for p in model.parameters():
        p.data[:] = p.data + 0.3 * rng.standard_normal(p.shape)
    X = rng.standard_normal((1, 3, stft_cfg.n_bins, geom.n_mics)) + 1j * rng.standard_normal(
        (1, 3, stft_cfg.n_bins, geom.n_mics))
    S = rng.standard_normal((1, 3, stft_cfg.n_bins)) + 1j * rng.standard_normal((1, 3, stft_cfg.n_bins))
    return model, X, S


def model_check(seed: int = 0, regime: str = "full-raw", Q: int = 3) -> CheckResult:
    from .taylor import flatten_target, loss

    model, X, S = micro_model(seed, regime, Q)
    target = flatten_target(S)
    err = grad_check(lambda: loss(model.forward(X), target, model.cfg.compression_power),
                     model.parameters())
    return CheckResult(f"taylor_model[{regime},Q={Q}]", err, MODEL_TOLERANCE)


def all_checks(seed: int = 0) -> list[CheckResult]:
    return op_checks(seed) + [model_check(seed, r) for r in ("full-raw", "full-physics", "semi")]
