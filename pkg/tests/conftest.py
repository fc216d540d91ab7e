from __future__ import annotations

import numpy as np
import pytest

from mask_beamforming.config import SceneConfig
from mask_beamforming.scenes import mix_scene, synthetic_source


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hpd():
    """Factory of random Hermitian positive definite batches."""

    def make(rng, batch, size):
        shape = tuple(batch) + (size, size)
        a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return a @ np.conj(a).swapaxes(-1, -2) + 0.1 * np.eye(size)

    return make


@pytest.fixture
def scene_factory():
    """Factory of small synthetic scenes on a fixed 8 cm microphone pair."""

    def make(
        n_sources=2,
        duration=1.0,
        rt60=0.0,
        seed=0,
        azimuths=(50.0, 125.0),
        sample_rate=8000,
    ):
        cfg = SceneConfig(
            n_sources=n_sources,
            n_mics=2,
            sample_rate=sample_rate,
            rt60=rt60,
            mic_spacing_cm=(8, 8, 8, 8, 8, 8, 8),
            azimuths_deg=tuple(azimuths[:n_sources]),
            duration=duration,
            random_mic_pair=False,
            seed=seed,
        )
        source_rng = np.random.default_rng([seed, 99])
        sources = [
            synthetic_source(duration, sample_rate, source_rng)
            for _ in range(n_sources)
        ]
        return mix_scene(sources, cfg)

    return make
