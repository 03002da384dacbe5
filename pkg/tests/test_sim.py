import json

import numpy as np
import pytest

from beamix import sim
from beamix.array import ArrayGeometry, circular_array, steering_vector
from beamix.errors import DegenerateSceneError, InvalidParameterError, ShapeError, UndefinedMetricError
from beamix.stft import StftConfig, analyze


@pytest.mark.parametrize("kind", sim.SOURCE_KINDS)
def test_sources_deterministic_unit_rms(kind):
    a = sim.synth_source(kind, 0.5, 42)
    np.testing.assert_array_equal(a, sim.synth_source(kind, 0.5, 42))
    assert a.shape == (8000,)
    assert np.sqrt(np.mean(a ** 2)) == pytest.approx(1.0, abs=1e-12)
    assert not np.array_equal(a, sim.synth_source(kind, 0.5, 43))


def test_silent_source_is_degenerate():
    # the syllabic envelope may not have started within the first few milliseconds
    with pytest.raises(DegenerateSceneError):
        sim.synth_source("speechlike", 0.001, 0)


def test_unknown_source_kind():
    with pytest.raises(InvalidParameterError):
        sim.synth_source("violin", 1.0, 0)


def test_white_noise_statistics():
    x = sim.synth_source("noise", 4.0, 3, color="white")
    assert abs(x.mean()) < 0.01
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0, abs=0.01)


def test_tonal_peak_at_f0():
    fs = 16000
    x = sim.synth_source("tonal", 4.0, 9, f0=200.0)
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    freqs = np.fft.rfftfreq(x.size, 1 / fs)

    def level(f):
        return spec[np.argmin(np.abs(freqs - f))]

    peak = spec[(freqs > 190) & (freqs < 210)].max()
    for f in (175.0, 225.0):
        assert 20 * np.log10(peak / level(f)) >= 20.0


def test_zero_delay_is_exact_copy(geom, rng):
    x = rng.standard_normal(1000)
    out = sim.spatialize(geom, x, 37.0)
    np.testing.assert_array_equal(out[geom.reference_index], x)


def test_integer_delay_cross_correlation():
    fs = 16000.0
    r = 2 * 343.0 / fs  # two samples of travel time
    g = circular_array(r, 6, with_center=True, sample_rate=fs)
    x = np.random.default_rng(0).standard_normal(4000)
    out = sim.spatialize(g, x, 0.0)
    centre, mic = out[6], out[0]
    lags = np.arange(-10, 11)
    corr = [np.dot(mic[20:-20], np.roll(centre, lag)[20:-20]) for lag in lags]
    assert lags[int(np.argmax(corr))] == round(-r / 343.0 * fs)


@pytest.mark.parametrize("f_bin", [12, 30, 75, 110])
def test_spatialize_matches_steering(geom, f_bin):
    cfg = StftConfig()
    f = cfg.bin_freqs()[f_bin]
    t = np.arange(16000) / 16000.0
    out = sim.spatialize(geom, np.cos(2 * np.pi * f * t), 63.0)
    X = analyze(out, cfg).data[20:-20, f_bin, :]
    rel = X / X[:, [geom.reference_index]]
    h = steering_vector(geom, 63.0, f).elements
    err = np.abs(np.angle(rel * np.conj(h)[None]))
    assert err.max() < 0.02


def test_mix_at_snr_exact(rng):
    target = rng.standard_normal((3, 500))
    noise = rng.standard_normal((3, 500))
    scene = sim.mix_at_snr(target, [noise], 0.0, reference_index=1)
    ratio = np.sqrt(np.mean(scene.clean_ref ** 2) / np.mean(scene.noise_ref ** 2))
    assert ratio == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_array_equal(scene.mixture, scene.target + scene.noise)
    scaled = sim.mix_at_snr(target, [7.0 * noise], 0.0, reference_index=1)
    np.testing.assert_allclose(scaled.mixture, scene.mixture, rtol=1e-13, atol=1e-14)


def test_mix_at_snr_40db_matches_metric(geom):
    spec = sim.SceneSpec(10.0, [200.0], 40.0, 2.0, "speechlike", ["white"], seed=5)
    scene = sim.render_scene(geom, spec)
    assert sim.si_snr(scene.clean_ref, scene.noisy_ref) == pytest.approx(40.0, abs=0.1)


def test_mix_at_snr_errors(rng):
    t = rng.standard_normal((2, 100))
    with pytest.raises(DegenerateSceneError):
        sim.mix_at_snr(t, [np.zeros((2, 100))], 0.0)
    with pytest.raises(DegenerateSceneError):
        sim.mix_at_snr(np.zeros((2, 100)), [t], 0.0)
    with pytest.raises(InvalidParameterError):
        sim.mix_at_snr(t, [t], np.inf)
    with pytest.raises(ShapeError):
        sim.mix_at_snr(t, [t[:, :50]], 0.0)


def test_scene_spec_validation():
    with pytest.raises(InvalidParameterError):
        sim.SceneSpec(0.0, [], 0.0)
    with pytest.raises(InvalidParameterError):
        sim.SceneSpec(0.0, [1, 2, 3, 4], 0.0)
    with pytest.raises(InvalidParameterError):
        sim.SceneSpec(0.0, [1.0], 0.0, duration_s=0.0)


def test_rendered_scene_snr_and_determinism(geom):
    for spec in sim.make_specs(5, "set-B", 21, duration_s=0.3):
        a, b = sim.render_scene(geom, spec), sim.render_scene(geom, spec)
        np.testing.assert_array_equal(a.mixture, b.mixture)
        snr = 20 * np.log10(np.sqrt(np.mean(a.clean_ref ** 2) / np.mean(a.noise_ref ** 2)))
        assert snr == pytest.approx(spec.snr_db, abs=1e-9)
        assert -5.0 <= spec.snr_db <= 10.0


@pytest.mark.parametrize("bucket", [(0, 15), (15, 45), (45, 90), (90, 180)])
def test_buckets_respected(bucket):
    specs = sim.make_specs(200, f"{bucket[0]}-{bucket[1]}", 4)
    for s in specs:
        assert len(s.noise_doas) == 1
        d = float(sim.circular_difference(s.target_doa, s.noise_doas[0]))
        assert bucket[0] - 1e-9 <= d <= bucket[1] + 1e-9


def test_make_specs_reproducible():
    a = [s.to_dict() for s in sim.make_specs(100, "90-180", 7)]
    b = [s.to_dict() for s in sim.make_specs(100, "90-180", 7)]
    assert a == b


def test_set_b_noise_counts():
    counts = np.bincount([len(s.noise_doas) for s in sim.make_specs(1000, "set-B", 11)], minlength=4)
    assert counts[0] == 0
    assert np.all(counts[1:] >= 200)


@pytest.mark.parametrize("bad", ["90-45", "0-200", "abc", (10, 5)])
def test_invalid_bucket(bad):
    with pytest.raises(InvalidParameterError):
        sim.parse_bucket(bad)


def test_si_snr_examples(rng):
    s = rng.standard_normal(1000)
    assert sim.si_snr(s, s) == 60.0
    assert sim.si_snr(s, 3.3 * s) == 60.0
    s = s - s.mean()
    n = rng.standard_normal(1000)
    n = n - n.mean()
    n -= np.dot(n, s) / np.dot(s, s) * s
    n *= np.sqrt(np.dot(s, s) / np.dot(n, n) / 10.0)
    assert sim.si_snr(s, s + n) == pytest.approx(10.0, abs=1e-9)
    e = s + 2 * n
    assert sim.si_snr(s, 0.01 * e) == pytest.approx(sim.si_snr(s, e), abs=1e-9)
    with pytest.raises(UndefinedMetricError):
        sim.si_snr(np.zeros(10), s[:10])
    with pytest.raises(ShapeError):
        sim.si_snr(s, s[:-1])


def test_reverb_tail_flag(geom):
    spec = sim.SceneSpec(0.0, [90.0], 5.0, 0.5, "speechlike", ["pink"], seed=1, reverb_tail=True)
    dry = sim.SceneSpec(0.0, [90.0], 5.0, 0.5, "speechlike", ["pink"], seed=1)
    assert not np.allclose(sim.render_scene(geom, spec).target, sim.render_scene(geom, dry).target)


def test_dataset_persistence(tmp_path, geom):
    scenes = sim.make_dataset(geom, 3, "set-B", 2, duration_s=0.25)
    sim.save_dataset(tmp_path, scenes, geom.sample_rate, geom)
    back, manifest = sim.load_dataset(tmp_path)
    assert len(manifest["scenes"]) == 3
    assert ArrayGeometry.from_json(manifest["geometry"]).n_mics == 7
    for a, b in zip(scenes, back):
        np.testing.assert_allclose(b.mixture, a.mixture, atol=1e-6)
        assert b.spec == a.spec
    side = json.loads((tmp_path / "scene_00000.json").read_text())
    assert side["channel_map"] == list(range(7)) and side["reference_index"] == 6
    with pytest.raises(FileNotFoundError):
        sim.load_dataset(tmp_path / "nothing")
