"""Parameter checkpoints in the package tensor-file format."""

from __future__ import annotations

import numpy as np

from .. import tensorfile
from .layers import Module
from .optim import AdamState


def save_checkpoint(path, model: Module, manifest: dict, adam: AdamState | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    meta = dict(manifest)
    meta["parameters"] = {k: list(v.shape) for k, v in model.state_dict().items()}
    if adam is not None:
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam/m/{i}"] = m
            arrays[f"adam/v/{i}"] = v
        meta["optimizer"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                             "eps": adam.eps, "step": adam.step, "n_moments": len(adam.m)}
    tensorfile.save(path, arrays, meta)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, AdamState | None]:
    arrays, meta = tensorfile.load(path)
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    adam = None
    opt = meta.get("optimizer")
    if opt:
        n = opt["n_moments"]
        adam = AdamState(opt["lr"], opt["beta1"], opt["beta2"], opt["eps"], opt["step"],
                         [arrays[f"adam/m/{i}"] for i in range(n)],
                         [arrays[f"adam/v/{i}"] for i in range(n)])
    return params, meta, adam
