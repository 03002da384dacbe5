import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamix.array import steering_vector
from beamix.errors import NumericalFailureError, ShapeError
from beamix.oracle import estimate_covariance, principal_steering, ti_mvdr, ti_mwf


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_psd(rng, k, m, rank=None):
    a = crandn(rng, k, m, rank or m)
    return a @ np.conj(np.swapaxes(a, -1, -2))


def test_covariance_examples(rng):
    v = crandn(rng, 1, 3, 4)
    phi = estimate_covariance(v).matrices
    np.testing.assert_allclose(phi[1], np.outer(v[0, 1], v[0, 1].conj()), atol=1e-15)
    assert np.linalg.matrix_rank(phi[1]) == 1
    assert not np.any(estimate_covariance(np.zeros((5, 2, 3))).matrices)
    with pytest.raises(ShapeError):
        estimate_covariance(np.zeros((0, 2, 3)))


def test_covariance_white_noise():
    rng = np.random.default_rng(5)
    X = (rng.standard_normal((10000, 2, 4)) + 1j * rng.standard_normal((10000, 2, 4))) / np.sqrt(2)
    cov = estimate_covariance(X)
    assert cov.frame_count == 10000
    assert np.abs(cov.matrices - np.eye(4)).max() < 0.1
    np.testing.assert_allclose(cov.matrices, np.conj(np.swapaxes(cov.matrices, -1, -2)), atol=1e-10)


def test_mvdr_identity_noise_is_delay_and_sum(rng):
    c = crandn(rng, 6, 5)
    for sigma2 in (1.0, 3.7):
        w = ti_mvdr(sigma2 * np.broadcast_to(np.eye(5), (6, 5, 5)), c)
        np.testing.assert_allclose(w, c / np.sum(np.abs(c) ** 2, axis=1, keepdims=True), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 7))
def test_mvdr_distortionless(seed, m):
    rng = np.random.default_rng(seed)
    c = crandn(rng, 3, m)
    w = ti_mvdr(random_psd(rng, 3, m), c)
    np.testing.assert_allclose(np.einsum("km,km->k", w.conj(), c), 1.0, atol=1e-10)


def test_mvdr_rejects_interferer(geom):
    f = 2000.0
    c = steering_vector(geom, 0.0, f).elements
    a = steering_vector(geom, 90.0, f).elements
    phi_n = np.outer(a, a.conj()) + 1e-4 * np.eye(7)
    w = ti_mvdr(phi_n[None], c[None])[0]
    assert abs(np.vdot(w, a)) ** 2 <= 1e-4


def test_mwf_passthrough_and_zero(rng):
    phi = random_psd(rng, 4, 5)
    w = ti_mwf(phi, phi, 2, loading=0.0)
    e = np.zeros(5)
    e[2] = 1
    np.testing.assert_allclose(w, np.broadcast_to(e, (4, 5)), atol=1e-10)
    assert not np.any(ti_mwf(phi, np.zeros_like(phi), 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 7))
def test_mwf_normal_equations(seed, m):
    rng = np.random.default_rng(seed)
    phi_s = random_psd(rng, 3, m, rank=1)
    phi_x = phi_s + random_psd(rng, 3, m) + 0.1 * np.eye(m)
    w = ti_mwf(phi_x, phi_s, 0, loading=0.0)
    resid = np.einsum("kmn,kn->km", phi_x, w) - phi_s[:, :, 0]
    assert np.linalg.norm(resid) < 1e-10 * max(1.0, np.linalg.norm(phi_s))


def test_mwf_singular_fails():
    with pytest.raises(NumericalFailureError):
        ti_mwf(np.zeros((1, 3, 3)), np.zeros((1, 3, 3)), 0, loading=0.0)


def test_mwf_beats_mvdr_and_ds_in_mse(rng):
    # per-bin MSE against the reference-channel target, from the oracle statistics
    m, ref = 4, 0
    c = np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    c[ref] = 1.0
    phi_s = 2.0 * np.outer(c, c.conj())[None]
    phi_n = random_psd(rng, 1, m) * 0.5 + 0.1 * np.eye(m)
    phi_x = phi_s + phi_n

    def mse(w):
        w = w[0]
        return np.real(w.conj() @ phi_x[0] @ w - 2 * np.real(w.conj() @ phi_s[0, :, ref]) + phi_s[0, ref, ref])

    w_mwf = ti_mwf(phi_x, phi_s, ref)
    w_mvdr = ti_mvdr(phi_n, c[None])
    w_ds = (c / m)[None]
    assert mse(w_mwf) <= mse(w_mvdr) + 1e-12
    assert mse(w_mwf) <= mse(w_ds) + 1e-12


def test_principal_steering_recovers_rank_one(rng):
    c = np.exp(1j * rng.uniform(0, 2 * np.pi, (2, 5)))
    c[:, 3] = 1.0
    phi = 1.5 * np.einsum("km,kn->kmn", c, c.conj())
    np.testing.assert_allclose(principal_steering(phi, 3), c, atol=1e-10)
