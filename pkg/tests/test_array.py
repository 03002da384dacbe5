import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamix.array import (ArrayGeometry, circular_array, diffuse_coherence, diffuse_coherence_matrices,
                          relative_delays, steering_from_delays, steering_matrix, steering_vector)
from beamix.errors import InvalidGeometryError, OutOfBandError

# Phase at the +x ring mic for a source at 0 deg and 1 kHz: the mic leads the
# centre by r / c, computed by hand as 2*pi*1000*0.0425/343.
RING_MIC_PHASE_1K = 0.7785287917059254
# Frequency where 2*pi*f*d/c = pi for d = 0.0425 m.
FIRST_ZERO_HZ = 4035.2941176470586


def test_default_array_layout(geom):
    assert geom.n_mics == 7
    assert geom.reference_index == 6
    np.testing.assert_allclose(geom.mic_positions[6], 0.0)
    radii = np.linalg.norm(geom.mic_positions[:6], axis=1)
    np.testing.assert_allclose(radii, 0.0425, atol=1e-15)
    assert geom.sound_speed == 343.0


def test_adjacent_ring_spacing_is_chord(geom):
    d = geom.distances()
    for i in range(6):
        assert d[i, (i + 1) % 6] == pytest.approx(2 * 0.0425 * np.sin(np.pi / 6), abs=1e-15)


def test_single_mic_array():
    g = circular_array(1.0, 1, with_center=False)
    assert g.n_mics == 1 and g.reference_index == 0
    np.testing.assert_allclose(g.mic_positions[0], [1.0, 0.0, 0.0])


@pytest.mark.parametrize("radius,n", [(0.0, 6), (-1.0, 6), (0.04, 0)])
def test_invalid_geometry(radius, n):
    with pytest.raises(InvalidGeometryError):
        circular_array(radius, n)


def test_geometry_validation():
    with pytest.raises(InvalidGeometryError):
        ArrayGeometry(np.zeros((2, 3)), reference_index=2)
    with pytest.raises(InvalidGeometryError):
        ArrayGeometry(np.array([[np.nan, 0, 0]]))
    with pytest.raises(InvalidGeometryError):
        ArrayGeometry(np.zeros((1, 3)), sound_speed=0.0)


def test_geometry_json_round_trip(geom):
    doc = json.loads(geom.to_json())
    assert doc["radius_m"] == 0.0425 and doc["n_ring"] == 6 and doc["with_center"]
    back = ArrayGeometry.from_json(geom.to_json())
    np.testing.assert_array_equal(back.mic_positions, geom.mic_positions)
    assert back.reference_index == geom.reference_index
    free = ArrayGeometry(np.array([[0.0, 0, 0], [0.1, 0.2, 0]]), 1)
    back = ArrayGeometry.from_json(free.to_json())
    np.testing.assert_array_equal(back.mic_positions, free.mic_positions)
    assert back.reference_index == 1


def test_steering_zero_frequency(geom):
    np.testing.assert_array_equal(steering_vector(geom, 123.0, 0.0).elements, np.ones(7))


def test_steering_ring_mic_phase(geom):
    h = steering_vector(geom, 0.0, 1000.0).elements
    assert np.angle(h[0]) == pytest.approx(RING_MIC_PHASE_1K, abs=1e-12)
    assert h[6] == 1 + 0j


def test_steering_out_of_band(geom):
    with pytest.raises(OutOfBandError):
        steering_vector(geom, 0.0, 8000.1)
    steering_vector(geom, 0.0, 8000.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 360), st.floats(0, 8000))
def test_steering_unit_modulus_and_reference(doa, f):
    from beamix.array import default_array
    g = default_array()
    h = steering_vector(g, doa, f).elements
    np.testing.assert_allclose(np.abs(h), 1.0, atol=1e-12)
    assert h[g.reference_index] == 1 + 0j


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 360), st.floats(0, 8000))
def test_steering_reciprocity(doa, f):
    from beamix.array import default_array
    g = default_array()
    tau = relative_delays(g, doa)
    np.testing.assert_allclose(np.conj(steering_from_delays(tau, f)), steering_from_delays(-tau, f),
                               atol=1e-12)


def test_steering_matrix_layout(geom):
    freqs = np.array([0.0, 500.0, 3000.0])
    doas = np.array([0.0, 90.0])
    H = steering_matrix(geom, doas, freqs)
    assert H.shape == (3, 7, 2)
    np.testing.assert_allclose(H[2, :, 1], steering_vector(geom, 90.0, 3000.0).elements, atol=1e-15)


def test_grid_directions_distinguishable(geom):
    # below the ring's spatial aliasing limit c / (2 * spacing) ~ 4 kHz
    grid = np.arange(0, 360, 10.0)
    for f in (500.0, 2000.0, 3900.0):
        H = steering_matrix(geom, grid, [f])[0]
        corr = np.abs(H.conj().T @ H) / geom.n_mics
        off = corr[~np.eye(len(grid), dtype=bool)]
        assert off.max() < 1.0 - 1e-9


def test_diffuse_coherence_basics(geom):
    G0 = diffuse_coherence(geom, 0.0).entries
    np.testing.assert_array_equal(G0, np.ones((7, 7)))
    for f in (100.0, 2500.0, 7900.0):
        G = diffuse_coherence(geom, f).entries
        np.testing.assert_array_equal(np.diag(G), 1.0)
        np.testing.assert_array_equal(G, G.conj().T)
        ev = np.linalg.eigvalsh(G + 1e-4 * np.eye(7))
        assert ev.min() >= -1e-8


def test_diffuse_coherence_first_zero(geom):
    G = diffuse_coherence(geom, FIRST_ZERO_HZ).entries
    # adjacent ring mics and every ring-centre pair are 0.0425 m apart
    assert abs(G[0, 1]) < 1e-12
    assert abs(G[0, 6]) < 1e-12


def test_diffuse_coherence_stack(geom, stft_cfg):
    mats = diffuse_coherence_matrices(geom, stft_cfg.bin_freqs())
    assert mats.shape == (161, 7, 7)
    np.testing.assert_allclose(mats[37], diffuse_coherence(geom, stft_cfg.bin_freqs()[37]).entries,
                               atol=1e-15)
