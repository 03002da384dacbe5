"""Time-invariant beam-space dictionaries.

A dictionary holds one beamformer per (frequency bin, look direction), laid
out ``(K, M, P)``. Four regimes are supported:

* ``fixed-ds`` / ``fixed-sd``: closed-form MVDR-type beams toward a uniform
  azimuth grid with identity or diffuse-field noise correlation.
* ``semi-learnable``: the inverse noise correlation is trained through a
  lower-triangular factor ``U`` (``Phi^-1 = U U^H``), steering stays fixed.
* ``full-learnable``: either ``U`` and the steering vectors are trained and the
  beams are still produced by the closed form (``keep_physics=True``), or the
  raw beam tensor itself is trained (``keep_physics=False``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensorfile
from .array import (ArrayGeometry, CoherenceMatrix, SteeringVector, diffuse_coherence_matrices,
                    steering_matrix)
from .errors import FormatError, InvalidParameterError, NumericalFailureError, ShapeError
from .nn import autograd as ag
from .nn.cplx import CTensor
from .nn.layers import Module
from .stft import StftConfig

REGIMES = ("fixed-ds", "fixed-sd", "semi-learnable", "full-learnable")
SD_LOADING = 1e-4


@dataclass
class BeamDictionary:
    beams: np.ndarray  # (K, M, P) complex
    regime: str
    doa_grid: np.ndarray
    geometry: ArrayGeometry | None = None
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.beams = np.asarray(self.beams, dtype=complex)
        self.doa_grid = np.asarray(self.doa_grid, dtype=float)
        if self.beams.ndim != 3 or self.beams.shape[2] < 1:
            raise ShapeError(f"beams must be (K, M, P) with P >= 1, got {self.beams.shape}")
        if self.beams.shape[2] != self.doa_grid.size:
            raise ShapeError("doa_grid length must equal P")
        if self.regime not in REGIMES:
            raise InvalidParameterError(f"unknown regime {self.regime!r}")
        if not np.all(np.isfinite(self.beams)):
            raise NumericalFailureError("dictionary contains non-finite entries")

    @property
    def shape(self):
        return self.beams.shape

    @property
    def n_beams(self) -> int:
        return self.beams.shape[2]

    def steering(self) -> np.ndarray:
        return steering_matrix(self.geometry, self.doa_grid, self.config.bin_freqs())

    def distortionless_error(self) -> float:
        """max over k, p of |B_{k,:,p}^H h_{k,p} - 1|."""
        resp = np.einsum("kmp,kmp->kp", self.beams.conj(), self.steering())
        return float(np.max(np.abs(resp - 1.0)))


def uniform_doa_grid(n_beams: int) -> np.ndarray:
    if n_beams < 1:
        raise InvalidParameterError("need at least one beam")
    return np.arange(n_beams) * (360.0 / n_beams)


def _loaded(phi: np.ndarray, loading: float) -> np.ndarray:
    m = phi.shape[-1]
    eps = loading * np.real(np.trace(phi, axis1=-2, axis2=-1)) / m
    return phi + eps[..., None, None] * np.eye(m)


def fixed_beam(h, phi, loading: float = SD_LOADING) -> np.ndarray:
    """Distortionless beam (Phi + eps I)^-1 h / (h^H (Phi + eps I)^-1 h), eps = loading*tr(Phi)/M."""
    h = h.elements if isinstance(h, SteeringVector) else np.asarray(h, dtype=complex)
    phi = phi.entries if isinstance(phi, CoherenceMatrix) else np.asarray(phi, dtype=complex)
    return fixed_beams(h[None, :, None], phi[None], loading)[0, :, 0]


def fixed_beams(h: np.ndarray, phi: np.ndarray, loading: float = SD_LOADING) -> np.ndarray:
    """Batched closed form: ``h`` is (K, M, P), ``phi`` is (K, M, M)."""
    if not np.any(h):
        raise InvalidParameterError("steering vector must be nonzero")
    try:
        num = np.linalg.solve(_loaded(phi, loading), h)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("loaded noise correlation is singular") from exc
    den = np.einsum("kmp,kmp->kp", h.conj(), num)
    with np.errstate(divide="ignore", invalid="ignore"):
        beams = num / den[:, None, :]
    if not np.all(np.isfinite(beams)):
        raise NumericalFailureError("closed-form beam is not finite")
    return beams


def noise_correlation(geom: ArrayGeometry, cfg: StftConfig, kind: str) -> np.ndarray:
    freqs = cfg.bin_freqs()
    if kind == "ds":
        return np.broadcast_to(np.eye(geom.n_mics, dtype=complex), (freqs.size, geom.n_mics, geom.n_mics)).copy()
    if kind == "sd":
        return diffuse_coherence_matrices(geom, freqs)
    raise InvalidParameterError(f"fixed regime must be 'ds' or 'sd', got {kind!r}")


def build_fixed_dictionary(geom: ArrayGeometry, cfg: StftConfig = StftConfig(), regime: str = "ds",
                           n_beams: int = 36, loading: float = SD_LOADING) -> BeamDictionary:
    kind = regime.lower().removeprefix("fixed-")
    grid = uniform_doa_grid(n_beams)
    h = steering_matrix(geom, grid, cfg.bin_freqs())
    beams = fixed_beams(h, noise_correlation(geom, cfg, kind), loading)
    return BeamDictionary(beams, f"fixed-{kind}", grid, geom, cfg)


# ---- trainable regimes ------------------------------------------------------

class DictionaryModule(Module):
    """Common interface: ``materialize()`` gives the (K, M, P) beams as a CTensor."""

    regime: str
    doa_grid: np.ndarray
    geometry: ArrayGeometry
    config: StftConfig

    def materialize(self) -> CTensor:
        raise NotImplementedError

    def after_update(self) -> None:
        """Hook run after every optimizer step."""

    def freeze(self) -> BeamDictionary:
        return BeamDictionary(self.materialize().numpy(), self.regime, self.doa_grid,
                              self.geometry, self.config)


class FrozenDictionary(DictionaryModule):
    def __init__(self, dictionary: BeamDictionary):
        self.dictionary = dictionary
        self.regime = dictionary.regime
        self.doa_grid = dictionary.doa_grid
        self.geometry = dictionary.geometry
        self.config = dictionary.config
        self._beams = CTensor.constant(dictionary.beams)

    def materialize(self) -> CTensor:
        return self._beams

    def freeze(self) -> BeamDictionary:
        return self.dictionary


class CholeskyNoiseModel(Module):
    """Per-bin lower-triangular factors U_k with Phi_k^-1 = U_k U_k^H."""

    def __init__(self, factors: np.ndarray, trainable: bool = True):
        m = factors.shape[-1]
        self.mask = np.tril(np.ones((m, m)))
        factors = factors * self.mask
        self.U = CTensor.parameter(factors) if trainable else CTensor.constant(factors)
        self.trainable = trainable

    @classmethod
    def from_coherence(cls, phi: np.ndarray, loading: float = SD_LOADING,
                       trainable: bool = True) -> "CholeskyNoiseModel":
        inv = np.linalg.inv(_loaded(phi, loading))
        inv = 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))
        try:
            factors = np.linalg.cholesky(inv)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError("Cholesky factorization of the loaded inverse failed") from exc
        return cls(factors, trainable)

    def factor(self) -> CTensor:
        return CTensor(self.U.re * self.mask, self.U.im * self.mask)

    def inverse_noise(self) -> np.ndarray:
        u = self.factor().numpy()
        return u @ np.conj(np.swapaxes(u, -1, -2))

    def enforce_structure(self) -> None:
        self.U.re.data *= self.mask
        self.U.im.data *= self.mask


class PhysicsDictionary(DictionaryModule):
    """Beams re-materialized as U U^H h / ||U^H h||^2 on every call."""

    def __init__(self, geom: ArrayGeometry, cfg: StftConfig, n_beams: int, noise: CholeskyNoiseModel,
                 train_steering: bool, regime: str):
        self.geometry, self.config, self.regime = geom, cfg, regime
        self.doa_grid = uniform_doa_grid(n_beams)
        h = steering_matrix(geom, self.doa_grid, cfg.bin_freqs())
        self.noise = noise
        self.steer = CTensor.parameter(h) if train_steering else CTensor.constant(h)

    def materialize(self) -> CTensor:
        u = self.noise.factor()
        v = u.hermitian().matmul(self.steer)  # (K, M, P)
        a = u.matmul(v)
        norm = v.abs2().sum(axis=1, keepdims=True)
        return a * ag.power(norm, -1.0)

    def after_update(self) -> None:
        self.noise.enforce_structure()


class RawDictionary(DictionaryModule):
    """Free complex beam tensor, no structural constraint after initialization."""

    def __init__(self, initial: BeamDictionary, regime: str = "full-learnable"):
        self.geometry, self.config, self.regime = initial.geometry, initial.config, regime
        self.doa_grid = initial.doa_grid
        self.beams = CTensor.parameter(initial.beams)

    def materialize(self) -> CTensor:
        return self.beams


def init_semi_learnable(geom: ArrayGeometry, cfg: StftConfig = StftConfig(), n_beams: int = 36,
                        loading: float = SD_LOADING) -> tuple[PhysicsDictionary, CholeskyNoiseModel]:
    noise = CholeskyNoiseModel.from_coherence(noise_correlation(geom, cfg, "sd"), loading)
    return PhysicsDictionary(geom, cfg, n_beams, noise, False, "semi-learnable"), noise


def init_full_learnable(geom: ArrayGeometry, cfg: StftConfig = StftConfig(), n_beams: int = 36,
                        keep_physics: bool = True, loading: float = SD_LOADING) -> DictionaryModule:
    if keep_physics:
        noise = CholeskyNoiseModel.from_coherence(noise_correlation(geom, cfg, "sd"), loading)
        return PhysicsDictionary(geom, cfg, n_beams, noise, True, "full-learnable")
    return RawDictionary(build_fixed_dictionary(geom, cfg, "sd", n_beams, loading))


def make_dictionary(regime: str, geom: ArrayGeometry, cfg: StftConfig = StftConfig(),
                    n_beams: int = 36) -> DictionaryModule:
    """Short regime names used by the CLI and training: ds, sd, semi, full-physics, full-raw."""
    if regime in ("ds", "sd"):
        return FrozenDictionary(build_fixed_dictionary(geom, cfg, regime, n_beams))
    if regime == "semi":
        return init_semi_learnable(geom, cfg, n_beams)[0]
    if regime == "full-physics":
        return init_full_learnable(geom, cfg, n_beams, keep_physics=True)
    if regime == "full-raw":
        return init_full_learnable(geom, cfg, n_beams, keep_physics=False)
    raise InvalidParameterError(f"unknown dictionary regime {regime!r}")


# ---- persistence ----------------------------------------------------------------

def save_dictionary(path, d: BeamDictionary) -> None:
    k, m, p = d.beams.shape
    meta = {"K": k, "M": m, "P": p, "regime": d.regime, "doa_grid": d.doa_grid.tolist(),
            "geometry": json.loads(d.geometry.to_json()) if d.geometry is not None else None,
            "stft": d.config.to_dict()}
    tensorfile.save(path, {"beams": d.beams}, meta)


def load_dictionary(path) -> BeamDictionary:
    arrays, meta = tensorfile.load(path)
    if "beams" not in arrays or "regime" not in meta:
        raise FormatError(f"{path}: not a dictionary file")
    beams = arrays["beams"]
    if beams.shape != (meta["K"], meta["M"], meta["P"]):
        raise FormatError(f"{path}: header shape does not match payload")
    geom = ArrayGeometry.from_json(meta["geometry"]) if meta.get("geometry") else None
    cfg = StftConfig(**meta["stft"]) if meta.get("stft") else StftConfig()
    return BeamDictionary(beams, meta["regime"], meta["doa_grid"], geom, cfg)
