from __future__ import annotations

import logging

import numpy as np
import pytest

from mask_beamforming.errors import ShapeMismatchError
from mask_beamforming.masks import (
    COVARIANCE_FLOOR,
    MaskTensor,
    estimate_covariance,
    input_feature,
    observation_covariance,
    oracle_activation,
    oracle_psm,
)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_psm_of_single_source_is_one(rng):
    c = _complex(rng, (6, 5, 1, 2))
    mask = oracle_psm(c.sum(axis=2), c)
    np.testing.assert_allclose(mask.values, 1.0)


def test_psm_is_clipped_and_sees_phase(rng):
    c = _complex(rng, (20, 9, 3, 2))
    x = c.sum(axis=2)
    mask = oracle_psm(x, c, ref_channel=1).values
    assert mask.min() >= 0.0 and mask.max() <= 1.0
    # an image in antiphase with the mixture gets zero weight
    opposite = np.stack([x, -x], axis=2)
    flipped = oracle_psm(x, opposite).values
    np.testing.assert_allclose(flipped[..., 1], 0.0)


def test_psm_shape_checks(rng):
    c = _complex(rng, (4, 3, 2, 2))
    with pytest.raises(ShapeMismatchError):
        oracle_psm(c.sum(axis=2)[:3], c)
    with pytest.raises(ShapeMismatchError):
        oracle_psm(c.sum(axis=2), c, ref_channel=2)


def test_mask_tensor_range():
    with pytest.raises(ValueError):
        MaskTensor(np.full((2, 2, 1), 1.2))
    with pytest.raises(ShapeMismatchError):
        MaskTensor(np.zeros((2, 2)))


def test_covariance_matches_direct_sum(rng):
    for _ in range(50):
        T, F, N, M = 7, 4, 2, 3
        x = _complex(rng, (T, F, M))
        mask = rng.uniform(0.05, 1.0, size=(T, F, N))
        cov = estimate_covariance(mask, x)
        for f in range(F):
            for n in range(N):
                num = sum(
                    mask[t, f, n] * np.outer(x[t, f], np.conj(x[t, f]))
                    for t in range(T)
                )
                expected = num / mask[:, f, n].sum()
                np.testing.assert_allclose(
                    cov.matrices[f, n], expected, atol=1e-12
                )
        assert not cov.degenerate.any()


def test_covariance_is_hermitian_psd_and_scale_invariant(rng):
    x = _complex(rng, (30, 5, 2))
    mask = rng.uniform(0.0, 1.0, size=(30, 5, 2))
    r = estimate_covariance(mask, x).matrices
    np.testing.assert_allclose(r, np.conj(r).swapaxes(-1, -2))
    assert np.linalg.eigvalsh(r).min() > -1e-10
    scaled = estimate_covariance(0.3 * mask, x).matrices
    np.testing.assert_allclose(scaled, r, atol=1e-12)


def test_empty_mask_gets_floor(rng, caplog):
    x = _complex(rng, (10, 3, 2))
    mask = rng.uniform(0.1, 1.0, size=(10, 3, 2))
    mask[:, 1, 0] = 0.0
    with caplog.at_level(logging.WARNING, logger="mask_beamforming.masks"):
        cov = estimate_covariance(mask, x)
    assert cov.degenerate[1, 0] and cov.degenerate.sum() == 1
    np.testing.assert_allclose(
        cov.matrices[1, 0], COVARIANCE_FLOOR * np.eye(2)
    )
    assert "empty mask mass" in caplog.text


def test_interference_sums_other_sources(rng):
    x = _complex(rng, (12, 2, 2))
    mask = rng.uniform(0.1, 1.0, size=(12, 2, 3))
    cov = estimate_covariance(mask, x)
    np.testing.assert_allclose(
        cov.interference(1), cov.matrices[:, 0] + cov.matrices[:, 2]
    )
    single = estimate_covariance(mask[..., :1], x)
    np.testing.assert_allclose(
        single.interference(0),
        np.broadcast_to(COVARIANCE_FLOOR * np.eye(2), (2, 2, 2)),
    )


def test_observation_covariance(rng):
    x = _complex(rng, (9, 2, 2))
    expected = np.einsum("tfm,tfk->fmk", x, np.conj(x)) / 9
    np.testing.assert_allclose(observation_covariance(x), expected)


def test_oracle_activation_has_unit_mean(rng):
    c = _complex(rng, (40, 6, 2, 3))
    v = oracle_activation(c).values
    assert v.shape == (40, 6, 2)
    np.testing.assert_allclose(v.mean(axis=0), 1.0)
    silent = oracle_activation(np.zeros((5, 2, 1, 2)))
    np.testing.assert_allclose(silent.values, 0.0)


def test_input_feature_normalized_per_frequency(rng):
    x = _complex(rng, (50, 7, 2))
    x[:, 3] = 2.0
    feat = input_feature(x)
    live = [f for f in range(7) if f != 3]
    np.testing.assert_allclose(feat.values[:, live].mean(axis=0), 0.0,
                               atol=1e-10)
    np.testing.assert_allclose(feat.values[:, live].std(axis=0), 1.0)
    np.testing.assert_allclose(feat.values[:, 3], 0.0)
    assert feat.std[3] == 0.0
    with pytest.raises(ShapeMismatchError):
        input_feature(x[:1])
