"""Beam-space algebra: projection onto a dictionary, activation mixing, the
oracle residual-cancelling term, and beampatterns.

Arrays follow the package layout: spectrograms ``(L, K, M)``, beam outputs and
activations ``(L, K, P)``, dictionaries ``(K, M, P)``. Activations are stored
unconjugated; :func:`mix` conjugates them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .array import ArrayGeometry, steering_matrix
from .dictionary import BeamDictionary
from .errors import InvalidParameterError, ShapeError
from .stft import MultichannelSpectrogram


@dataclass
class Beampattern:
    freq_hz: float
    doas_deg: np.ndarray
    gains: np.ndarray  # linear magnitude

    def gains_db(self, floor: float = 1e-12) -> np.ndarray:
        return 20.0 * np.log10(np.maximum(self.gains, floor))


def _beams(d) -> np.ndarray:
    return d.beams if isinstance(d, BeamDictionary) else np.asarray(d)


def _spec(x) -> np.ndarray:
    return x.data if isinstance(x, MultichannelSpectrogram) else np.asarray(x)


def project(d, X) -> np.ndarray:
    """Beam outputs Y[l,k,p] = B[k,:,p]^H X[l,k,:]."""
    B, X = _beams(d), _spec(X)
    if X.ndim != 3 or X.shape[1:] != B.shape[:2]:
        raise ShapeError(f"spectrogram {X.shape} incompatible with dictionary {B.shape}")
    return np.einsum("kmp,lkm->lkp", B.conj(), X)


def mix(Y: np.ndarray, G: np.ndarray) -> np.ndarray:
    """S[l,k] = sum_p conj(G[l,k,p]) Y[l,k,p]."""
    if Y.shape != G.shape:
        raise ShapeError(f"beam tensor {Y.shape} and activations {G.shape} differ")
    return np.einsum("lkp,lkp->lk", G.conj(), Y)


def weights_from_activation(d, G: np.ndarray) -> np.ndarray:
    """Per-bin weights W[l,k,:] = sum_p B[k,:,p] G[l,k,p], shape (L, K, M)."""
    B = _beams(d)
    if G.ndim != 3 or G.shape[1] != B.shape[0] or G.shape[2] != B.shape[2]:
        raise ShapeError(f"activations {G.shape} incompatible with dictionary {B.shape}")
    return np.einsum("kmp,lkp->lkm", B, G)


def apply_weights(W: np.ndarray, X) -> np.ndarray:
    """S[l,k] = W[l,k,:]^H X[l,k,:]; time-invariant ``W`` of shape (K, M) broadcasts over frames."""
    X = _spec(X)
    W = np.asarray(W)
    if W.ndim == 2:
        W = W[None]
    if W.shape[1:] != X.shape[1:] or W.shape[0] not in (1, X.shape[0]):
        raise ShapeError(f"weights {W.shape} incompatible with spectrogram {X.shape}")
    return np.einsum("lkm,lkm->lk", np.broadcast_to(W, X.shape).conj(), X)


def oracle_delta(d, R) -> np.ndarray:
    """Residual-cancelling prior delta[l,k,p] = -B[k,:,p]^H R[l,k,:]."""
    return -project(d, R)


def least_norm_activation(d, c: np.ndarray, n_frames: int = 1) -> np.ndarray:
    """Minimum-norm G with sum_p conj(G_p) (B_p^H c) = 1 in every bin.

    ``c`` is the per-bin target transfer vector (K, M); the result is constant
    over ``n_frames`` frames.
    """
    B = _beams(d)
    b = np.einsum("kmp,km->kp", B.conj(), np.asarray(c))
    G = b / np.sum(np.abs(b) ** 2, axis=1, keepdims=True)
    return np.broadcast_to(G, (n_frames,) + G.shape).copy()


def beampattern(weights: np.ndarray, geom: ArrayGeometry, freq_hz: float,
                grid_step_deg: float = 1.0) -> Beampattern:
    """|W^H h(theta, f)| over azimuths 0, step, ..., 360 - step."""
    n = 360.0 / grid_step_deg
    if grid_step_deg <= 0 or abs(n - round(n)) > 1e-9:
        raise InvalidParameterError("grid step must divide 360")
    doas = np.arange(int(round(n))) * grid_step_deg
    h = steering_matrix(geom, doas, [freq_hz])[0]  # (M, D)
    gains = np.abs(np.asarray(weights).conj() @ h)
    return Beampattern(float(freq_hz), doas, gains)


def broadband_beampattern(weights: np.ndarray, geom: ArrayGeometry, freqs_hz: np.ndarray,
                          band: tuple[float, float] = (200.0, 4000.0),
                          grid_step_deg: float = 1.0) -> Beampattern:
    """Power gain |W_k^H h(theta, f_k)|^2 averaged over the bins inside ``band``,
    returned as a magnitude pattern. Incidental dips of single-bin patterns move
    with frequency, so the broadband minimum marks nulls that hold across the band."""
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    sel = np.flatnonzero((freqs_hz >= band[0]) & (freqs_hz <= band[1]))
    if sel.size == 0:
        raise InvalidParameterError(f"no bins inside band {band}")
    power = np.mean([beampattern(weights[k], geom, freqs_hz[k], grid_step_deg).gains ** 2 for k in sel], axis=0)
    doas = np.arange(power.size) * grid_step_deg
    return Beampattern(float(np.mean(freqs_hz[sel])), doas, np.sqrt(power))


def dictionary_beampatterns(d: BeamDictionary, grid_step_deg: float = 1.0,
                            beams=None, bins=None):
    """Yield (beam, bin, Beampattern) for the selected beams and bins."""
    beams = range(d.n_beams) if beams is None else beams
    bins = range(d.beams.shape[0]) if bins is None else bins
    freqs = d.config.bin_freqs()
    for p in beams:
        for k in bins:
            yield p, k, beampattern(d.beams[k, :, p], d.geometry, freqs[k], grid_step_deg)


def write_beampattern_csv(path, rows) -> int:
    """``rows`` of (beam, freq_hz, doa_deg, gain_db); returns the row count."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beam", "freq_hz", "doa_deg", "gain_db"])
        for row in rows:
            freq = row[1] if isinstance(row[1], str) else f"{row[1]:.6g}"
            w.writerow([row[0], freq, f"{row[2]:.6g}", f"{row[3]:.6f}"])
            n += 1
    return n


def write_activation_csv(path, G: np.ndarray, k: int | None = None) -> None:
    """Activation magnitudes as (frame, beam, value); averaged over bins unless ``k`` is given."""
    mag = np.abs(G)
    mag = mag.mean(axis=1) if k is None else mag[:, k, :]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "beam", "value"])
        for l in range(mag.shape[0]):
            for p in range(mag.shape[1]):
                w.writerow([l, p, f"{mag[l, p]:.8g}"])
