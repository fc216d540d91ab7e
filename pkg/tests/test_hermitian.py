from __future__ import annotations

import numpy as np
import pytest
import torch

from mask_beamforming.errors import (
    NotPositiveDefiniteError,
    ShapeMismatchError,
    SingularMatrixError,
)
from mask_beamforming.hermitian import (
    EPS0,
    gevd_principal,
    herm_inverse,
    hermitize,
    load,
    logdet,
    rayleigh_quotient,
    sample_outer,
    trace,
)


def test_hermitize_yields_hermitian(rng):
    a = rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3))
    h = hermitize(a)
    np.testing.assert_allclose(h, np.conj(h).swapaxes(-1, -2))


def test_inverse_matches_numpy(rng, hpd):
    a = hpd(rng, (4, 6), 3)
    inv = herm_inverse(a)
    np.testing.assert_allclose(inv @ a, np.broadcast_to(np.eye(3), a.shape),
                               atol=1e-9)


def test_load_formula(rng, hpd):
    a = hpd(rng, (2,), 4)
    loaded = load(a, 1e-3)
    scale = 1e-3 * (trace(a).real / 4 + EPS0)
    expected = a + scale[:, None, None] * np.eye(4)
    np.testing.assert_allclose(loaded, expected)
    assert load(a, 0.0) is a


def test_singular_requires_loading():
    a = np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex)
    with pytest.raises(SingularMatrixError):
        herm_inverse(a)
    assert np.all(np.isfinite(herm_inverse(a, loading=1e-6)))


def test_logdet_matches_slogdet(rng, hpd):
    a = hpd(rng, (7,), 4)
    sign, expected = np.linalg.slogdet(a)
    np.testing.assert_allclose(sign.real, 1.0)
    np.testing.assert_allclose(logdet(a), expected, rtol=1e-10)


def test_logdet_rejects_indefinite():
    a = np.diag([1.0, -2.0]).astype(complex)
    with pytest.raises(NotPositiveDefiniteError):
        logdet(a)
    with pytest.raises(NotPositiveDefiniteError):
        logdet(torch.from_numpy(a))


def test_torch_and_numpy_agree(rng, hpd):
    a = hpd(rng, (3, 2), 3)
    t = torch.from_numpy(a)
    np.testing.assert_allclose(
        herm_inverse(t, 1e-6).numpy(), herm_inverse(a, 1e-6), atol=1e-10
    )
    np.testing.assert_allclose(logdet(t).numpy(), logdet(a), rtol=1e-10)


def test_sample_outer_is_rank_one(rng):
    x = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    r = sample_outer(x)
    np.testing.assert_allclose(np.linalg.matrix_rank(r), 1)
    np.testing.assert_allclose(trace(r).real, np.sum(np.abs(x) ** 2, -1))


def test_non_square_rejected():
    with pytest.raises(ShapeMismatchError):
        logdet(np.ones((2, 3)))


def test_gevd_principal_dominates_random_vectors(rng, hpd):
    for _ in range(10):
        a = hpd(rng, (10,), 3)
        b = hpd(rng, (10,), 3)
        w = gevd_principal(a, b)
        best = rayleigh_quotient(w, a, b)
        candidates = rng.standard_normal(
            (10_000, 10, 3)
        ) + 1j * rng.standard_normal((10_000, 10, 3))
        assert np.all(rayleigh_quotient(candidates, a, b) <= best + 1e-9)
        np.testing.assert_allclose(np.linalg.norm(w, axis=-1), 1.0)


def test_gevd_principal_is_scale_invariant(rng, hpd):
    a = hpd(rng, (50,), 4)
    b = hpd(rng, (50,), 4)
    w = gevd_principal(a, b)
    for alpha, beta in [(3.0, 1.0), (1.0, 1e-4), (1e3, 7.5)]:
        v = gevd_principal(alpha * a, beta * b)
        cosine = np.abs(np.einsum("fm,fm->f", np.conj(w), v))
        assert np.all(cosine >= 1 - 1e-10)


def test_inverse_residual_up_to_condition_1e6(rng):
    for size in range(2, 9):
        q, _ = np.linalg.qr(
            rng.standard_normal((size, size))
            + 1j * rng.standard_normal((size, size))
        )
        for cond in (1e2, 1e4, 1e6):
            a = (q * np.geomspace(1.0, 1.0 / cond, size)) @ np.conj(q).T
            residual = a @ herm_inverse(hermitize(a)) - np.eye(size)
            assert np.max(np.sum(np.abs(residual), axis=-1)) < 1e-8


def test_gevd_requires_positive_definite_denominator(rng, hpd):
    a = hpd(rng, (), 2)
    with pytest.raises(NotPositiveDefiniteError):
        gevd_principal(a, -np.eye(2))
