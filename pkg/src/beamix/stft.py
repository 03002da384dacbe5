"""STFT analysis/synthesis with a square-root Hann window, plus power compression.

Frames are left-aligned (frame ``l`` covers samples ``[l*hop, l*hop + win_len)``),
the forward FFT is unnormalized and the inverse carries ``1/fft_size``.
Spectrogram arrays are laid out as ``(frame, bin, channel)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import InvalidParameterError, ShapeError, TooShortError


def sqrt_hann(n: int) -> np.ndarray:
    """Square root of the periodic Hann window; its square is COLA at hop n/2."""
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 320
    hop: int = 160
    fft_size: int = 320
    compression_power: float = 0.5
    sample_rate: float = 16000.0
    window: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.win_len < 1 or self.hop < 1 or self.win_len % self.hop:
            raise InvalidParameterError("hop must divide win_len")
        if self.fft_size < self.win_len:
            raise InvalidParameterError("fft_size must be >= win_len")
        if not 0 < self.compression_power <= 1:
            raise InvalidParameterError("compression_power must lie in (0, 1]")
        win = sqrt_hann(self.win_len) if self.window is None else np.asarray(self.window, float)
        if win.shape != (self.win_len,):
            raise InvalidParameterError("window length must equal win_len")
        win.setflags(write=False)
        object.__setattr__(self, "window", win)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def bin_freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.fft_size

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.win_len) // self.hop + 1

    def n_samples(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.win_len

    def interior(self, n_frames: int) -> slice:
        """Samples where the overlap-add of squared windows is complete."""
        return slice(self.win_len - self.hop, n_frames * self.hop)

    def to_dict(self) -> dict:
        return {"win_len": self.win_len, "hop": self.hop, "fft_size": self.fft_size,
                "compression_power": self.compression_power, "sample_rate": self.sample_rate}


@dataclass
class MultichannelSpectrogram:
    data: np.ndarray  # (L, K, M) complex
    config: StftConfig

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[1] != self.config.n_bins:
            raise ShapeError(f"expected (L, {self.config.n_bins}, M), got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    def channel(self, m: int) -> np.ndarray:
        return self.data[:, :, m]


def analyze(wave: np.ndarray, cfg: StftConfig = StftConfig()) -> MultichannelSpectrogram:
    """Windowed one-sided FFT of every frame of every channel.

    ``wave`` is ``(M, n)`` or a single channel ``(n,)``.
    """
    x = np.atleast_2d(np.asarray(wave, dtype=float))
    if x.shape[-1] < cfg.win_len:
        raise TooShortError(f"signal of {x.shape[-1]} samples is shorter than one window ({cfg.win_len})")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_len, axis=-1)[:, ::cfg.hop]
    spec = np.fft.rfft(frames * cfg.window, n=cfg.fft_size, axis=-1)  # (M, L, K)
    return MultichannelSpectrogram(np.ascontiguousarray(spec.transpose(1, 2, 0)), cfg)


def synthesize_array(data: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add of ``(L, K)`` or ``(L, K, M)``; returns ``(n,)`` or ``(M, n)``."""
    data = np.asarray(data)
    single = data.ndim == 2
    if single:
        data = data[:, :, None]
    if data.ndim != 3 or data.shape[1] != cfg.n_bins:
        raise ShapeError(f"spectrogram shape {data.shape} does not match config ({cfg.n_bins} bins)")
    n_frames, _, n_ch = data.shape
    frames = np.fft.irfft(data, n=cfg.fft_size, axis=1)[:, :cfg.win_len, :] * cfg.window[None, :, None]
    out = np.zeros((cfg.n_samples(n_frames), n_ch))
    for l in range(n_frames):
        out[l * cfg.hop:l * cfg.hop + cfg.win_len] += frames[l]
    out = out.T
    return out[0] if single else out


def synthesize(spec: MultichannelSpectrogram) -> np.ndarray:
    return synthesize_array(spec.data, spec.config)


def _check_power(power: float) -> None:
    if not 0 < power <= 1:
        raise InvalidParameterError(f"compression power must lie in (0, 1], got {power}")


def compress(spec, power: float = 0.5):
    """Map |X| to |X|**power keeping the phase. Works on arrays or spectrograms."""
    _check_power(power)
    if isinstance(spec, MultichannelSpectrogram):
        return MultichannelSpectrogram(_powmag(spec.data, power), spec.config)
    return _powmag(np.asarray(spec), power)


def decompress(spec, power: float = 0.5):
    _check_power(power)
    if isinstance(spec, MultichannelSpectrogram):
        return MultichannelSpectrogram(_powmag(spec.data, 1.0 / power), spec.config)
    return _powmag(np.asarray(spec), 1.0 / power)


def _powmag(x: np.ndarray, power: float) -> np.ndarray:
    mag = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0, mag ** (power - 1.0), 0.0)
    return x * scale


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 ``(M, n)``; 16-bit integers are scaled to [-1, 1)."""
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    else:
        data = data.astype(float)
    return np.atleast_2d(data.T) if data.ndim > 1 else data[None, :], int(sr)


def write_wav(path, wave: np.ndarray, sample_rate: int, sample_format: str = "float32") -> None:
    x = np.atleast_2d(np.asarray(wave, dtype=float))
    if sample_format == "float32":
        payload = x.T.astype(np.float32)
    elif sample_format == "int16":
        payload = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise InvalidParameterError(f"unsupported sample format {sample_format!r}")
    wavfile.write(path, int(sample_rate), payload)
