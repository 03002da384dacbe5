"""Taylor-recursion enhancement model on top of a beam-space dictionary.

Forward pass for a batch of multichannel spectra ``X``:

1. beam outputs ``Y = B^H X`` for every dictionary beam,
2. 0th order: a per-bin network maps compressed beam magnitudes (current
   frame plus causal context) to complex activations ``G``; ``S0 = sum_p
   conj(G_p) Y_p`` on uncompressed ``Y``,
3. higher orders: ``H_0 = S0`` and ``H_{q+1} = q H_q + m_q(Y, H_q)`` where
   ``m_q`` is a trainable network standing in for the derivative term,
4. output ``S0 + H_1 + ... + H_Q`` (no factorial weights).

Networks share weights across frequency; the normalized bin index is appended
as an input feature. Internally tensors are laid out ``(K, N)`` or
``(K, N, P)`` with ``N = batch * frames`` (frame index fastest).
"""

from __future__ import annotations

import csv
import json
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from . import sim
from .dictionary import DictionaryModule, make_dictionary
from .errors import InvalidParameterError, PoisonedGraphError, ShapeError
from .nn import autograd as ag
from .nn.checkpoint import save_checkpoint
from .nn.cplx import CTensor, compress, compressed_magnitude
from .nn.layers import MLP, Module
from .nn.optim import Adam, PlateauHalving
from .stft import StftConfig, analyze, synthesize_array

log = logging.getLogger(__name__)

FEATURE_SCALE = 0.25  # brings compressed STFT magnitudes of unit-RMS audio near O(1)


@dataclass
class TaylorConfig:
    Q: int = 3
    P: int = 36
    hidden_width: int = 32
    hidden_layers: int = 2
    frames_context: int = 3
    regime: str = "full-raw"
    lr: float = 5e-4
    lr_patience: int = 2
    epochs: int = 25
    batch_size: int = 4
    compression_power: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.Q < 0 or self.P < 1 or self.hidden_width < 1 or self.hidden_layers < 1:
            raise InvalidParameterError("need Q >= 0, P >= 1 and positive network sizes")
        if self.frames_context < 0 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidParameterError("frames_context, batch_size and epochs must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class TaylorModel(Module):
    def __init__(self, dictionary: DictionaryModule, cfg: TaylorConfig):
        if dictionary.doa_grid.size != cfg.P:
            raise ShapeError(f"dictionary has {dictionary.doa_grid.size} beams, config expects P={cfg.P}")
        self.cfg = cfg
        self.dictionary = dictionary
        rng = np.random.default_rng(cfg.seed)
        n_ctx = cfg.P * (cfg.frames_context + 1)
        hidden = [cfg.hidden_width] * cfg.hidden_layers
        self.mixer = MLP([n_ctx + 1, *hidden, 2 * cfg.P], rng=rng)
        self.mixer.zero_output()
        self.mixer.layers[-1].bias.data[: cfg.P] = 1.0 / cfg.P
        self.high_order = [MLP([cfg.P + 2, *hidden, 2], rng=rng) for _ in range(cfg.Q)]
        for m in self.high_order:
            m.zero_output()

    # -- building blocks ------------------------------------------------------
    def project(self, X: np.ndarray) -> CTensor:
        """Beam outputs (K, N, P) for spectra X of shape (B, L, K, M)."""
        b, l, k, m = X.shape
        xk = CTensor.constant(np.ascontiguousarray(X.transpose(2, 0, 1, 3).reshape(k, b * l, m)))
        return xk.matmul(self.dictionary.materialize().conj())

    def features(self, Y: CTensor, batch: int) -> tuple[ag.Tensor, ag.Tensor, ag.Tensor]:
        """Context magnitudes (K*N, P*(C+1)), current-frame magnitudes (K*N, P)
        and the normalized bin index (K*N, 1)."""
        k, n, p = Y.shape
        frames = n // batch
        mag = compressed_magnitude(Y, self.cfg.compression_power) * FEATURE_SCALE
        current = mag.reshape(k * n, p)
        mag = mag.reshape(k, batch, frames, p)
        ctx = [mag] + [ag.shift(mag, c, axis=2) for c in range(1, self.cfg.frames_context + 1)]
        feats = ag.concat(ctx, axis=-1) if len(ctx) > 1 else mag
        feats = feats.reshape(k * n, p * (self.cfg.frames_context + 1))
        kfeat = np.repeat(np.arange(k) / max(k - 1, 1), n)[:, None]
        return feats, current, ag.Tensor(kfeat)

    def forward_0th(self, Y: CTensor, feats: ag.Tensor, kfeat: ag.Tensor) -> tuple[CTensor, CTensor]:
        k, n, p = Y.shape
        out = self.mixer(ag.concat([feats, kfeat], axis=1))
        G = CTensor(out[:, :p].reshape(k, n, p), out[:, p:].reshape(k, n, p))
        return G, G.conj_mul(Y).sum(axis=-1)

    def recursion_step(self, q: int, H: CTensor, current: ag.Tensor, kfeat: ag.Tensor) -> CTensor:
        """H_{q+1} = q H_q + m_q(Y, H_q); m_q multiplies H_q by a complex gain predicted
        from the current-frame beam magnitudes, |H_q| and the bin index."""
        k, n = H.shape
        hmag = compressed_magnitude(H, self.cfg.compression_power).reshape(k * n, 1) * FEATURE_SCALE
        gain = self.high_order[q](ag.concat([current, hmag, kfeat], axis=1))
        gain = CTensor(gain[:, 0].reshape(k, n), gain[:, 1].reshape(k, n))
        return H * float(q) + H * gain

    def forward(self, X: np.ndarray, return_parts: bool = False):
        """Enhanced spectrum as a (K, N) CTensor for spectra X of shape (B, L, K, M)."""
        if X.ndim == 3:
            X = X[None]
        Y = self.project(X)
        feats, current, kfeat = self.features(Y, X.shape[0])
        G, S0 = self.forward_0th(Y, feats, kfeat)
        out, H, terms = S0, S0, [S0]
        for q in range(self.cfg.Q):
            H = self.recursion_step(q, H, current, kfeat)
            terms.append(H)
            out = out + H
        if return_parts:
            return out, {"Y": Y, "G": G, "terms": terms}
        return out

    def enhance(self, X: np.ndarray) -> np.ndarray:
        """Inference on (L, K, M) or (B, L, K, M); returns (L, K) or (B, L, K) complex."""
        single = X.ndim == 3
        Xb = X[None] if single else X
        with ag.no_grad():
            out = self.forward(Xb).numpy()
        out = unflatten(out, Xb.shape[0])
        return out[0] if single else out

    def activations(self, X: np.ndarray) -> np.ndarray:
        """Complex activations G for one (L, K, M) spectrogram, shape (L, K, P)."""
        with ag.no_grad():
            _, parts = self.forward(X[None], return_parts=True)
        G = parts["G"].numpy()  # (K, L, P)
        return G.transpose(1, 0, 2)

    def manifest(self) -> dict:
        return {"taylor": self.cfg.to_dict(), "regime": self.dictionary.regime,
                "mixer": self.mixer.describe(), "high_order": [m.describe() for m in self.high_order]}


def flatten_target(S: np.ndarray) -> np.ndarray:
    """(B, L, K) -> (K, B*L), the model's internal layout."""
    b, l, k = S.shape
    return np.ascontiguousarray(S.transpose(2, 0, 1).reshape(k, b * l))


def unflatten(Z: np.ndarray, batch: int) -> np.ndarray:
    k, n = Z.shape
    return Z.reshape(k, batch, n // batch).transpose(1, 2, 0)


def loss(estimate: CTensor, clean, power: float = 0.5) -> ag.Tensor:
    """Mean over bins of |c(S^) - c(S)|^2 + (|S^|^p - |S|^p)^2 with c the power compression."""
    target = clean if isinstance(clean, CTensor) else CTensor.constant(clean)
    if estimate.shape != target.shape:
        raise ShapeError(f"estimate {estimate.shape} vs clean {target.shape}")
    ce, ct = compress(estimate, power), compress(target, power)
    diff = ce - ct
    mag = compressed_magnitude(estimate, power) - compressed_magnitude(target, power)
    return (diff.abs2() + mag * mag).mean()


# ---- data ----------------------------------------------------------------------

@dataclass
class Batch:
    index: int
    X: np.ndarray  # (B, L, K, M)
    S: np.ndarray  # (B, L, K) clean reference spectra
    scenes: list = field(default_factory=list)


def scene_spectra(scene: sim.Scene, stft_cfg: StftConfig) -> tuple[np.ndarray, np.ndarray]:
    X = analyze(scene.mixture, stft_cfg).data
    S = analyze(scene.clean_ref, stft_cfg).data[:, :, 0]
    return X, S


def make_batch(index: int, scenes: list, stft_cfg: StftConfig) -> Batch:
    pairs = [scene_spectra(s, stft_cfg) for s in scenes]
    return Batch(index, np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]), scenes)


def prefetch(make, jobs, depth: int = 2):
    """Yield ``make(job)`` for each job, rendering ahead on a worker thread
    through a bounded queue; order is preserved."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    sentinel = object()

    def worker():
        try:
            for job in jobs:
                q.put(make(job))
        except BaseException as exc:  # surfaced to the consumer
            q.put(exc)
        q.put(sentinel)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    while True:
        item = q.get()
        if item is sentinel:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    t.join()


# ---- training ------------------------------------------------------------------

@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    lr: float = 5e-4
    best_val_loss: float = float("inf")
    bad_epochs: int = 0
    history: list = field(default_factory=list)
    best_params: dict | None = None


def train_step(model: TaylorModel, opt: Adam, batch: Batch) -> float:
    opt.zero_grad()
    try:
        value = loss(model.forward(batch.X), flatten_target(batch.S), model.cfg.compression_power)
        value.backward()
    except PoisonedGraphError as exc:
        raise PoisonedGraphError(f"batch {batch.index}: {exc}") from exc
    opt.step()
    model.dictionary.after_update()
    return value.item()


def evaluate_loss(model: TaylorModel, scenes: list, stft_cfg: StftConfig, batch_size: int) -> float:
    total, count = 0.0, 0
    with ag.no_grad():
        for i in range(0, len(scenes), batch_size):
            b = make_batch(i, scenes[i:i + batch_size], stft_cfg)
            total += loss(model.forward(b.X), flatten_target(b.S), model.cfg.compression_power).item() * len(b.scenes)
            count += len(b.scenes)
    return total / count


def train(model: TaylorModel, train_scenes: list, val_scenes: list, stft_cfg: StftConfig = StftConfig(),
          log_path=None, checkpoint_path=None) -> TrainState:
    """Epoch loop with Adam, plateau halving on validation loss and best-weight retention."""
    if not train_scenes or not val_scenes:
        raise InvalidParameterError("training and validation sets must be non-empty")
    cfg = model.cfg
    opt = Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauHalving(cfg.lr, cfg.lr_patience)
    state = TrainState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(train_scenes))
            jobs = [(i, [train_scenes[j] for j in order[i:i + cfg.batch_size]])
                    for i in range(0, len(order), cfg.batch_size)]
            losses = []
            for batch in prefetch(lambda job: make_batch(job[0], job[1], stft_cfg), jobs):
                losses.append(train_step(model, opt, batch))
                state.step += 1
            val = evaluate_loss(model, val_scenes, stft_cfg, cfg.batch_size)
            state.epoch = epoch + 1
            state.history.append({"epoch": epoch + 1, "train_loss": float(np.mean(losses)),
                                  "val_loss": val, "lr": opt.lr})
            if writer:
                writer.writerow([epoch + 1, f"{np.mean(losses):.8g}", f"{val:.8g}", f"{opt.lr:.6g}"])
                fh.flush()
            log.info("epoch %d train %.5f val %.5f lr %.2e", epoch + 1, np.mean(losses), val, opt.lr)
            if val < state.best_val_loss:
                state.best_val_loss = val
                state.best_params = model.state_dict()
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model, model.manifest() | {"epoch": epoch + 1},
                                    opt.state)
            opt.lr = sched.update(val)
            state.lr, state.bad_epochs = opt.lr, sched.bad_epochs
    finally:
        if writer:
            fh.close()
    if state.best_params is not None:
        model.load_state_dict(state.best_params)
    return state


def overfit(model: TaylorModel, scene: sim.Scene, steps: int, lr: float,
            stft_cfg: StftConfig = StftConfig()) -> list[float]:
    """Repeated Adam steps on one scene; returns the loss before each step plus the final loss."""
    batch = make_batch(0, [scene], stft_cfg)
    opt = Adam(model.parameters(), lr=lr)
    trace = [train_step(model, opt, batch) for _ in range(steps)]
    with ag.no_grad():
        trace.append(loss(model.forward(batch.X), flatten_target(batch.S), model.cfg.compression_power).item())
    return trace


def build_model(geom, cfg: TaylorConfig, stft_cfg: StftConfig = StftConfig()) -> TaylorModel:
    return TaylorModel(make_dictionary(cfg.regime, geom, stft_cfg, cfg.P), cfg)


def enhance_scene(model: TaylorModel, scene: sim.Scene, stft_cfg: StftConfig = StftConfig()) -> np.ndarray:
    X = analyze(scene.mixture, stft_cfg).data
    return synthesize_array(model.enhance(X), stft_cfg)


def si_snr_improvement(model: TaylorModel, scenes: list, stft_cfg: StftConfig = StftConfig()) -> dict:
    """Mean SI-SNR of noisy reference mic vs enhanced output over the WOLA-complete interior."""
    noisy, enhanced = [], []
    for scene in scenes:
        est = enhance_scene(model, scene, stft_cfg)
        sl = stft_cfg.interior(stft_cfg.n_frames(scene.mixture.shape[1]))
        ref = scene.clean_ref[sl]
        noisy.append(sim.si_snr(ref, scene.noisy_ref[sl]))
        enhanced.append(sim.si_snr(ref, est[sl]))
    return {"noisy": float(np.mean(noisy)), "enhanced": float(np.mean(enhanced)),
            "improvement": float(np.mean(enhanced) - np.mean(noisy)),
            "per_scene": list(zip(noisy, enhanced))}


def load_model(path, geom, stft_cfg: StftConfig = StftConfig()) -> TaylorModel:
    from .nn.checkpoint import load_checkpoint

    params, meta, _ = load_checkpoint(path)
    model = build_model(geom, TaylorConfig(**meta["taylor"]), stft_cfg)
    model.load_state_dict(params)
    return model


def write_config(path, cfg: TaylorConfig, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict() | (extra or {}), fh, indent=1)
