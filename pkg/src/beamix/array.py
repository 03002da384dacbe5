"""Array geometry, far-field steering vectors and diffuse-field coherence.

Azimuths are in degrees, counterclockwise from the +x axis; sources lie in the
array plane (elevation 0). Steering is phase-only and referenced to the
reference microphone, so ``h[ref] == 1`` for every frequency and direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometryError, OutOfBandError

SOUND_SPEED = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray  # (M, 3) meters
    reference_index: int = 0
    sound_speed: float = SOUND_SPEED
    sample_rate: float = 16000.0
    layout: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise InvalidGeometryError("mic_positions must be a non-empty (M, 3) array")
        if not np.all(np.isfinite(pos)):
            raise InvalidGeometryError("mic coordinates must be finite")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise InvalidGeometryError(f"reference_index {self.reference_index} out of range")
        if not self.sound_speed > 0 or not self.sample_rate > 0:
            raise InvalidGeometryError("sound_speed and sample_rate must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    def distances(self) -> np.ndarray:
        """Pairwise Euclidean mic distances, (M, M)."""
        diff = self.mic_positions[:, None, :] - self.mic_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def to_json(self) -> str:
        doc = dict(self.layout)
        doc.update(sample_rate=self.sample_rate, sound_speed=self.sound_speed)
        if not self.layout:
            doc["mic_positions"] = self.mic_positions.tolist()
            doc["reference_index"] = self.reference_index
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str | dict) -> "ArrayGeometry":
        doc = json.loads(text) if isinstance(text, str) else dict(text)
        if "radius_m" in doc:
            geom = circular_array(doc["radius_m"], doc["n_ring"], doc.get("with_center", True),
                                  doc.get("sample_rate", 16000.0))
            if "sound_speed" in doc and doc["sound_speed"] != geom.sound_speed:
                geom = ArrayGeometry(geom.mic_positions, geom.reference_index, doc["sound_speed"],
                                     geom.sample_rate, geom.layout)
            return geom
        return cls(np.asarray(doc["mic_positions"], dtype=float), doc.get("reference_index", 0),
                   doc.get("sound_speed", SOUND_SPEED), doc.get("sample_rate", 16000.0))


@dataclass(frozen=True)
class SteeringVector:
    freq_hz: float
    doa_azimuth: float
    elements: np.ndarray


@dataclass(frozen=True)
class CoherenceMatrix:
    freq_hz: float
    entries: np.ndarray


def circular_array(radius_m: float, n_ring: int, with_center: bool = True,
                   sample_rate: float = 16000.0) -> ArrayGeometry:
    """Uniform circular array in the horizontal plane, first ring mic at 0 deg.

    With ``with_center`` a microphone at the origin is appended and used as
    the reference; otherwise the first ring microphone is the reference.
    """
    if not radius_m > 0:
        raise InvalidGeometryError(f"radius must be positive, got {radius_m}")
    if n_ring < 1:
        raise InvalidGeometryError("need at least one ring microphone")
    phi = 2.0 * np.pi * np.arange(n_ring) / n_ring
    ring = np.stack([radius_m * np.cos(phi), radius_m * np.sin(phi), np.zeros(n_ring)], axis=1)
    if with_center:
        pos = np.vstack([ring, np.zeros((1, 3))])
        ref = n_ring
    else:
        pos, ref = ring, 0
    layout = {"radius_m": float(radius_m), "n_ring": int(n_ring), "with_center": bool(with_center)}
    return ArrayGeometry(pos, ref, SOUND_SPEED, float(sample_rate), layout)


def default_array(sample_rate: float = 16000.0) -> ArrayGeometry:
    """Seven microphones: six on a 4.25 cm ring plus a center reference."""
    return circular_array(0.0425, 6, True, sample_rate)


def unit_direction(doa_deg) -> np.ndarray:
    th = np.deg2rad(np.asarray(doa_deg, dtype=float))
    return np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=-1)


def relative_delays(geom: ArrayGeometry, doa_deg) -> np.ndarray:
    """Plane-wave arrival delay of each mic relative to the reference, seconds.

    Shape ``(..., M)`` for a scalar or array of azimuths. A mic displaced
    toward the source hears it earlier, i.e. has a negative delay.
    """
    rel = geom.mic_positions - geom.mic_positions[geom.reference_index]
    u = unit_direction(doa_deg)
    return -(u @ rel.T) / geom.sound_speed


def steering_from_delays(delays: np.ndarray, freq_hz) -> np.ndarray:
    return np.exp(-2j * np.pi * np.multiply.outer(np.asarray(freq_hz, dtype=float), delays))


def _check_band(geom: ArrayGeometry, freq_hz) -> None:
    f = np.asarray(freq_hz, dtype=float)
    if np.any(f < 0) or np.any(f > geom.sample_rate / 2 * (1 + 1e-12)):
        raise OutOfBandError(f"frequency outside [0, {geom.sample_rate / 2}] Hz")


def steering_vector(geom: ArrayGeometry, doa_deg: float, freq_hz: float) -> SteeringVector:
    _check_band(geom, freq_hz)
    h = steering_from_delays(relative_delays(geom, doa_deg), freq_hz)
    return SteeringVector(float(freq_hz), float(doa_deg), h)


def steering_matrix(geom: ArrayGeometry, doas_deg, freqs_hz) -> np.ndarray:
    """Steering vectors for every (frequency, azimuth) pair, shape (K, M, P)."""
    _check_band(geom, freqs_hz)
    tau = relative_delays(geom, np.asarray(doas_deg, dtype=float))  # (P, M)
    h = steering_from_delays(tau, freqs_hz)  # (K, P, M)
    return np.ascontiguousarray(np.swapaxes(h, -1, -2))


def diffuse_coherence(geom: ArrayGeometry, freq_hz: float) -> CoherenceMatrix:
    """Spherically isotropic noise coherence, sin(x)/x with x = 2 pi f d / c."""
    return CoherenceMatrix(float(freq_hz), diffuse_coherence_matrices(geom, [freq_hz])[0])


def diffuse_coherence_matrices(geom: ArrayGeometry, freqs_hz) -> np.ndarray:
    f = np.asarray(freqs_hz, dtype=float)
    if np.any(f < 0):
        raise OutOfBandError("frequency must be non-negative")
    d = geom.distances()
    # np.sinc is the normalized sinc: sinc(y) = sin(pi y)/(pi y)
    gamma = np.sinc(2.0 * f[:, None, None] * d[None] / geom.sound_speed)
    return gamma.astype(complex)
