"""Far-field array scene synthesis and the SI-SNR metric.

Scenes are anechoic: each source reaches every microphone as a pure
fractional delay of the same waveform. Every random draw derives from the
scene seed, so a :class:`SceneSpec` fully determines its :class:`Scene`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .array import ArrayGeometry, relative_delays
from .errors import (DegenerateSceneError, InvalidParameterError, ShapeError,
                     UndefinedMetricError)
from .stft import read_wav, write_wav

SOURCE_KINDS = ("speechlike", "tonal", "white", "pink")
NOISE_KINDS = ("white", "pink", "tonal")
FRACDELAY_TAPS = 64
SI_SNR_CLAMP_DB = 60.0


@dataclass
class SceneSpec:
    target_doa: float
    noise_doas: list[float]
    snr_db: float
    duration_s: float = 2.0
    target_kind: str = "speechlike"
    noise_kinds: list[str] = field(default_factory=lambda: ["white"])
    seed: int = 0
    reverb_tail: bool = False

    def __post_init__(self):
        self.noise_doas = [float(d) for d in self.noise_doas]
        if not 1 <= len(self.noise_doas) <= 3:
            raise InvalidParameterError("a scene needs 1 to 3 directional noises")
        if len(self.noise_kinds) == 1 and len(self.noise_doas) > 1:
            self.noise_kinds = list(self.noise_kinds) * len(self.noise_doas)
        if len(self.noise_kinds) != len(self.noise_doas):
            raise InvalidParameterError("noise_kinds and noise_doas differ in length")
        if not self.duration_s > 0:
            raise InvalidParameterError("duration must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneSpec":
        return cls(**doc)


@dataclass
class Scene:
    mixture: np.ndarray  # (M, n)
    target: np.ndarray  # (M, n) spatialized target
    noise: np.ndarray  # (M, n) spatialized, SNR-scaled noise sum
    reference_index: int
    spec: SceneSpec | None = None

    @property
    def clean_ref(self) -> np.ndarray:
        return self.target[self.reference_index]

    @property
    def noise_ref(self) -> np.ndarray:
        return self.noise[self.reference_index]

    @property
    def noisy_ref(self) -> np.ndarray:
        return self.mixture[self.reference_index]


# ---- sources ----------------------------------------------------------------

def _unit_rms(x: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(x * x))
    if not rms > 0:
        raise DegenerateSceneError("source is silent; use a longer duration")
    return x / rms


def _pink(rng: np.random.Generator, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=float)
    f[0] = np.inf
    return np.fft.irfft(spec / np.sqrt(f), n)


def _syllable_envelope(rng: np.random.Generator, n: int, fs: float, rate_hz: float = 4.0) -> np.ndarray:
    env = np.zeros(n)
    t = rng.uniform(0.0, 0.5 / rate_hz)
    while t < n / fs:
        dur = rng.uniform(0.6, 1.4) / rate_hz
        start, stop = int(t * fs), min(int((t + dur) * fs), n)
        if stop > start:
            env[start:stop] = rng.uniform(0.4, 1.0) * np.hanning(int(dur * fs) + 2)[1:stop - start + 1]
        t += dur + rng.uniform(0.0, 0.25) / rate_hz
    return env


def synth_source(kind: str, duration_s: float, seed: int, sample_rate: float = 16000.0,
                 f0: float | None = None, color: str = "white") -> np.ndarray:
    """Unit-RMS stand-in source.

    ``speechlike``: noise shaped by three random formant resonances inside
    100-4000 Hz, gated by a syllabic ~4 Hz envelope. ``tonal``: harmonic stack
    with 5 Hz vibrato. ``noise`` (``color`` white or pink), or ``white`` /
    ``pink`` directly.
    """
    if kind == "noise":
        kind = color
    if kind not in SOURCE_KINDS:
        raise InvalidParameterError(f"unknown source kind {kind!r}")
    rng = np.random.default_rng(seed)
    fs = float(sample_rate)
    n = int(round(duration_s * fs))
    if kind == "white":
        return _unit_rms(rng.standard_normal(n))
    if kind == "pink":
        return _unit_rms(_pink(rng, n))
    t = np.arange(n) / fs
    if kind == "tonal":
        f0 = rng.uniform(110.0, 440.0) if f0 is None else float(f0)
        inst = f0 * (1.0 + 0.003 * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi)))
        phase = 2 * np.pi * np.cumsum(inst) / fs
        x = np.zeros(n)
        for h in range(1, int(0.45 * fs / f0) + 1):
            x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
        return _unit_rms(x)
    # speechlike
    exc = rng.standard_normal(n)
    formants = (rng.uniform(300, 800), rng.uniform(900, 2200), rng.uniform(2300, 3400))
    x = np.zeros(n)
    for i, fc in enumerate(formants):
        sos = signal.butter(2, [fc / 1.15, fc * 1.15], btype="bandpass", fs=fs, output="sos")
        x += signal.sosfilt(sos, exc) * (0.5 ** i)
    sos = signal.butter(4, [100.0, 4000.0], btype="bandpass", fs=fs, output="sos")
    x = signal.sosfilt(sos, x) * _syllable_envelope(rng, n, fs)
    return _unit_rms(x)


# ---- propagation -----------------------------------------------------------------

def fractional_delay_kernel(delay_samples: float, taps: int = FRACDELAY_TAPS) -> np.ndarray:
    """Hann-windowed sinc; tap ``i`` applies lag ``i - taps//2``."""
    half = taps // 2
    t = np.arange(-half, taps - half) - delay_samples
    win = np.where(np.abs(t) < half, 0.5 * (1.0 + np.cos(np.pi * t / half)), 0.0)
    return np.sinc(t) * win


def fractional_delay(x: np.ndarray, delay_samples: float, taps: int = FRACDELAY_TAPS) -> np.ndarray:
    """y[n] ~ x[n - delay] with zero padding outside the signal; same length as x."""
    if delay_samples == 0.0:
        return np.array(x, dtype=float)
    half = taps // 2
    return np.convolve(x, fractional_delay_kernel(delay_samples, taps))[half:half + len(x)]


def spatialize(geom: ArrayGeometry, wave: np.ndarray, doa_deg: float) -> np.ndarray:
    """Plane wave from ``doa_deg`` observed at every mic, shape (M, n)."""
    delays = relative_delays(geom, doa_deg) * geom.sample_rate
    return np.stack([fractional_delay(wave, d) for d in delays])


def diffuse_tail(rng: np.random.Generator, x: np.ndarray, fs: float, t60: float = 0.15,
                 level_db: float = -10.0) -> np.ndarray:
    """Add an exponentially decaying, mic-independent reverberant tail to (M, n) signals."""
    length = int(t60 * fs)
    t = np.arange(length) / fs
    decay = np.exp(-3.0 * np.log(10.0) * t / t60)
    decay[: int(0.005 * fs)] = 0.0
    out = np.empty_like(x)
    for m in range(x.shape[0]):
        ir = rng.standard_normal(length) * decay
        ir *= 10 ** (level_db / 20.0) / np.sqrt(np.sum(ir ** 2))
        out[m] = x[m] + signal.fftconvolve(x[m], ir)[: x.shape[1]]
    return out


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def mix_at_snr(target: np.ndarray, noises: list[np.ndarray], snr_db: float,
               reference_index: int = 0, spec: SceneSpec | None = None) -> Scene:
    """Scale the summed noise so the reference-channel SNR equals ``snr_db``."""
    if not np.isfinite(snr_db):
        raise InvalidParameterError("snr_db must be finite")
    if any(n.shape != target.shape for n in noises) or not noises:
        raise ShapeError("target and noises must share one (M, n) shape")
    noise = np.sum(noises, axis=0)
    t_rms, n_rms = _rms(target[reference_index]), _rms(noise[reference_index])
    if t_rms == 0.0 or n_rms == 0.0:
        raise DegenerateSceneError("silent target or noise on the reference channel")
    noise = noise * (t_rms / (n_rms * 10.0 ** (snr_db / 20.0)))
    return Scene(target + noise, target, noise, reference_index, spec)


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def render_scene(geom: ArrayGeometry, spec: SceneSpec) -> Scene:
    seeds = _child_seeds(spec.seed, 2 + len(spec.noise_doas))
    fs = geom.sample_rate
    target = spatialize(geom, synth_source(spec.target_kind, spec.duration_s, seeds[0], fs), spec.target_doa)
    noises = [spatialize(geom, synth_source(kind, spec.duration_s, s, fs), doa)
              for kind, doa, s in zip(spec.noise_kinds, spec.noise_doas, seeds[2:])]
    if spec.reverb_tail:
        rng = np.random.default_rng(seeds[1])
        target = diffuse_tail(rng, target, fs)
        noises = [diffuse_tail(rng, n, fs) for n in noises]
    return mix_at_snr(target, noises, spec.snr_db, geom.reference_index, spec)


# ---- datasets ----------------------------------------------------------------

def parse_bucket(bucket) -> tuple[float, float] | None:
    """``"45-90"`` or ``(45, 90)`` -> (45.0, 90.0); ``"set-B"`` -> None."""
    if isinstance(bucket, str):
        if bucket.lower() in ("set-b", "setb", "b"):
            return None
        try:
            lo, hi = (float(v) for v in bucket.split("-"))
        except ValueError as exc:
            raise InvalidParameterError(f"cannot parse bucket {bucket!r}") from exc
    else:
        lo, hi = (float(v) for v in bucket)
    if not 0.0 <= lo <= hi <= 180.0:
        raise InvalidParameterError(f"empty or invalid DOA-difference bucket [{lo}, {hi}]")
    return lo, hi


def circular_difference(a, b) -> np.ndarray:
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def make_specs(n_scenes: int, bucket, seed: int, duration_s: float = 2.0,
               snr_range: tuple[float, float] = (-5.0, 10.0), target_kind: str = "speechlike",
               noise_kinds=NOISE_KINDS, max_noises: int = 3) -> list[SceneSpec]:
    """Scene parameters only; Set-A buckets use one noise at a bounded DOA offset,
    Set-B draws 1..``max_noises`` noises at unconstrained DOAs."""
    rng_bucket = parse_bucket(bucket)
    rng = np.random.default_rng(seed)
    scene_seeds = _child_seeds(seed, n_scenes)
    specs = []
    for i in range(n_scenes):
        target = float(rng.uniform(0.0, 360.0))
        if rng_bucket is None:
            count = int(rng.integers(1, max_noises + 1))
            doas = [float(d) for d in rng.uniform(0.0, 360.0, size=count)]
        else:
            offset = rng.uniform(*rng_bucket) * (1.0 if rng.random() < 0.5 else -1.0)
            count, doas = 1, [float((target + offset) % 360.0)]
        kinds = [str(k) for k in rng.choice(list(noise_kinds), size=count)]
        snr = float(rng.uniform(*snr_range))
        specs.append(SceneSpec(target, doas, snr, duration_s, target_kind, kinds, scene_seeds[i]))
    return specs


def make_dataset(geom: ArrayGeometry, n_scenes: int, bucket, seed: int, **kwargs) -> list[Scene]:
    return [render_scene(geom, s) for s in make_specs(n_scenes, bucket, seed, **kwargs)]


# ---- metric ------------------------------------------------------------------

def si_snr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant SNR in dB, clamped to +/-60 dB."""
    s = np.asarray(reference, dtype=float)
    e = np.asarray(estimate, dtype=float)
    if s.shape != e.shape:
        raise ShapeError(f"length mismatch {s.shape} vs {e.shape}")
    s = s - s.mean()
    e = e - e.mean()
    ss = float(np.dot(s, s))
    if ss == 0.0:
        raise UndefinedMetricError("reference signal is zero")
    target = (np.dot(e, s) / ss) * s
    err = e - target
    num, den = float(np.dot(target, target)), float(np.dot(err, err))
    if den == 0.0:
        return SI_SNR_CLAMP_DB
    if num == 0.0:
        return -SI_SNR_CLAMP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SI_SNR_CLAMP_DB, SI_SNR_CLAMP_DB))


# ---- persistence ---------------------------------------------------------------

def save_scene(directory, name: str, scene: Scene, sample_rate: float) -> dict:
    directory = Path(directory)
    files = {"mixture": f"{name}_mix.wav", "target": f"{name}_target.wav", "noise": f"{name}_noise.wav"}
    for key, fname in files.items():
        write_wav(directory / fname, getattr(scene, key), int(sample_rate))
    sidecar = {"name": name, "spec": scene.spec.to_dict() if scene.spec else None,
               "seed": scene.spec.seed if scene.spec else None, "sample_rate": sample_rate,
               "reference_index": scene.reference_index,
               "channel_map": list(range(scene.mixture.shape[0])), "files": files}
    (directory / f"{name}.json").write_text(json.dumps(sidecar, indent=1))
    return sidecar


def load_scene(sidecar_path) -> Scene:
    sidecar_path = Path(sidecar_path)
    doc = json.loads(sidecar_path.read_text())
    base = sidecar_path.parent
    waves = {k: read_wav(base / f)[0] for k, f in doc["files"].items()}
    spec = SceneSpec.from_dict(doc["spec"]) if doc.get("spec") else None
    return Scene(waves["mixture"], waves["target"], waves["noise"], doc["reference_index"], spec)


def save_dataset(directory, scenes: list[Scene], sample_rate: float, geometry: ArrayGeometry,
                 extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:05d}"
        save_scene(directory, name, scene, sample_rate)
        s = scene.spec
        entries.append({"name": name, "sidecar": f"{name}.json", "target_doa": s.target_doa,
                        "noise_doas": s.noise_doas, "snr_db": s.snr_db, "noise_kinds": s.noise_kinds})
    manifest = {"geometry": json.loads(geometry.to_json()), "scenes": entries, **(extra or {})}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_dataset(directory) -> tuple[list[Scene], dict]:
    directory = Path(directory)
    path = directory / "manifest.json" if directory.is_dir() else directory
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest missing: {path}")
    manifest = json.loads(path.read_text())
    return [load_scene(path.parent / e["sidecar"]) for e in manifest["scenes"]], manifest
