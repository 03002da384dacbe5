"""Time-invariant oracle beamformers computed from ground-truth statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailureError, ShapeError
from .stft import MultichannelSpectrogram, StftConfig, analyze, synthesize_array

ORACLE_LOADING = 1e-6


@dataclass
class SpatialCovariance:
    matrices: np.ndarray  # (K, M, M)
    kind: str = "mixture"
    frame_count: int = 0


def estimate_covariance(spec, kind: str = "mixture") -> SpatialCovariance:
    """Utterance-averaged spatial covariance (1/L) sum_l X X^H per bin."""
    X = spec.data if isinstance(spec, MultichannelSpectrogram) else np.asarray(spec)
    if X.ndim != 3 or X.shape[0] < 1:
        raise ShapeError("need a (L, K, M) spectrogram with at least one frame")
    phi = np.einsum("lkm,lkn->kmn", X, X.conj()) / X.shape[0]
    return SpatialCovariance(phi, kind, X.shape[0])


def _mats(phi) -> np.ndarray:
    return phi.matrices if isinstance(phi, SpatialCovariance) else np.asarray(phi)


def _load(phi: np.ndarray, loading: float, power_ref: np.ndarray | None = None) -> np.ndarray:
    """phi + eps I with eps = loading * tr(power_ref) / M; ``power_ref`` defaults to ``phi``."""
    m = phi.shape[-1]
    ref = phi if power_ref is None else power_ref
    eps = loading * np.real(np.trace(ref, axis1=-2, axis2=-1)) / m
    eps = np.where(eps > 0, eps, loading)
    return phi + eps[:, None, None] * np.eye(m)


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("oracle covariance is singular after loading") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError("oracle solve produced non-finite weights")
    return x


def ti_mvdr(noise_cov, steering: np.ndarray, loading: float = ORACLE_LOADING,
            power_ref=None) -> np.ndarray:
    """W_k = (Phi_n + eps I)^-1 c_k / (c_k^H (Phi_n + eps I)^-1 c_k), shape (K, M).

    By default eps scales with the noise power. Passing the mixture covariance
    as ``power_ref`` scales it with the observed power instead, which keeps the
    weights from amplifying target model mismatch when the noise is very weak.
    """
    ref = None if power_ref is None else _mats(power_ref)
    phi = _load(_mats(noise_cov), loading, ref)
    c = np.asarray(steering, dtype=complex)
    num = _solve(phi, c[..., None])[..., 0]
    den = np.einsum("km,km->k", c.conj(), num)
    return num / den[:, None]


def ti_mwf(mixture_cov, speech_cov, reference_index: int, loading: float = ORACLE_LOADING) -> np.ndarray:
    """Multichannel Wiener filter toward the reference mic: Phi_x W = Phi_s e_ref."""
    phi_x = _load(_mats(mixture_cov), loading)
    rhs = _mats(speech_cov)[:, :, reference_index]
    return _solve(phi_x, rhs[..., None])[..., 0]


def principal_steering(speech_cov, reference_index: int) -> np.ndarray:
    """Principal eigenvector of Phi_s per bin, scaled to 1 at the reference mic."""
    _, vecs = np.linalg.eigh(_mats(speech_cov))
    v = vecs[:, :, -1]
    ref = v[:, reference_index]
    ref = np.where(np.abs(ref) > 1e-300, ref, 1.0)
    return v / ref[:, None]


def evaluate_scene(scene, geom, stft_cfg: StftConfig = StftConfig(),
                   loading: float = ORACLE_LOADING) -> dict:
    """TI-MVDR and TI-MWF on one simulated scene from its true target and noise images.

    MVDR uses the far-field steering of the true target DOA and loads relative to
    the mixture power. Returns SI-SNR of the noisy reference and both outputs over
    the WOLA-complete interior, plus the weights.
    """
    from . import beamspace, sim
    from .array import steering_matrix

    ref = scene.reference_index
    X = analyze(scene.mixture, stft_cfg).data
    phi_s = estimate_covariance(analyze(scene.target, stft_cfg), "speech").matrices
    phi_n = estimate_covariance(analyze(scene.noise, stft_cfg), "noise").matrices
    c = steering_matrix(geom, [scene.spec.target_doa], stft_cfg.bin_freqs())[:, :, 0]
    w_mvdr = ti_mvdr(phi_n, c, loading, power_ref=phi_s + phi_n)
    w_mwf = ti_mwf(phi_s + phi_n, phi_s, ref, loading)
    sl = stft_cfg.interior(X.shape[0])
    clean = scene.clean_ref[sl]
    out = {"noisy": sim.si_snr(clean, scene.noisy_ref[sl]), "w_mvdr": w_mvdr, "w_mwf": w_mwf}
    for name, w in (("mvdr", w_mvdr), ("mwf", w_mwf)):
        est = synthesize_array(beamspace.apply_weights(w, X), stft_cfg)
        out[name] = sim.si_snr(clean, est[sl])
    return out
