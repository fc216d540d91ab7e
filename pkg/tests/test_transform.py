from __future__ import annotations

import numpy as np
import pytest

from mask_beamforming.config import StftConfig
from mask_beamforming.errors import ShapeMismatchError, StftConfigError
from mask_beamforming.ports.audio import Waveform
from mask_beamforming.transform import (
    ComplexSpectrogram,
    istft,
    n_frames,
    stft,
    stft_sources,
    validate_config,
)

CFG = StftConfig()


def test_frame_count_and_shape(rng):
    w = Waveform(rng.standard_normal((2, 8000)), 8000)
    s = stft(w, CFG)
    assert n_frames(8000, CFG) == 126
    assert s.values.shape == (126, 129, 2)
    assert s.length == 8000 and s.sample_rate == 8000


@pytest.mark.parametrize("window", ["hann", "rect"])
def test_round_trip_reconstructs(rng, window):
    cfg = StftConfig(window=window)
    w = Waveform(rng.standard_normal((3, 5001)), 8000)
    back = istft(stft(w, cfg))
    assert back.samples.shape == w.samples.shape
    err = np.max(np.abs(back.samples - w.samples))
    assert err / np.max(np.abs(w.samples)) < 1e-6


def test_rect_window_dc_lands_in_bin_zero():
    cfg = StftConfig(window="rect")
    s = stft(Waveform(np.full(2048, 0.25), 8000), cfg)
    np.testing.assert_allclose(s.values[:, 0, 0].real, 0.25 * 256)
    assert np.max(np.abs(s.values[:, 1:, 0])) < 1e-9


def test_hann_dc_occupies_two_lowest_bins():
    s = stft(Waveform(np.ones(2048), 8000), CFG)
    assert np.max(np.abs(s.values[:, 2:, 0])) < 1e-9
    np.testing.assert_allclose(s.values[:, 0, 0].real, 128.0)


def test_unit_impulse_spectrum_is_window_sample():
    impulse = np.zeros(1024)
    impulse[0] = 1.0
    s = stft(Waveform(impulse, 8000), CFG)
    window = validate_config(CFG)
    for t in range(3):
        shifted = np.zeros(256)
        shifted[128 - 64 * t] = 1.0
        expected = np.abs(np.fft.rfft(window * shifted))
        np.testing.assert_allclose(
            np.abs(s.values[t, :, 0]), expected, atol=1e-12
        )
        np.testing.assert_allclose(expected, window[128 - 64 * t])


def test_frame_energy_matches_spectral_energy(rng):
    samples = rng.standard_normal(4000)
    s = stft(Waveform(samples, 8000), CFG)
    window = validate_config(CFG)
    weights = np.full(129, 2.0)
    weights[[0, -1]] = 1.0
    for t in range(2, 60):
        start = 64 * t - 128
        frame = samples[start : start + 256] * window
        spectral = np.sum(weights * np.abs(s.values[t, :, 0]) ** 2) / 256
        assert spectral == pytest.approx(np.sum(frame**2), rel=1e-9)


def test_stft_is_linear(rng):
    a = rng.standard_normal((2, 3000))
    b = rng.standard_normal((2, 3000))
    sa = stft(Waveform(a, 8000), CFG).values
    sb = stft(Waveform(b, 8000), CFG).values
    sab = stft(Waveform(2.0 * a - b, 8000), CFG).values
    np.testing.assert_allclose(sab, 2.0 * sa - sb, atol=1e-9)


def test_stft_sources_stacks_images(rng):
    images = [Waveform(rng.standard_normal((2, 1000)), 8000) for _ in "ab"]
    c = stft_sources(images, CFG)
    assert c.shape == (n_frames(1000, CFG), 129, 2, 2)
    with pytest.raises(ShapeMismatchError):
        stft_sources([], CFG)


@pytest.mark.parametrize(
    "cfg",
    [
        StftConfig(window_length=256, hop=100, fft_size=256),
        StftConfig(window_length=256, hop=256, fft_size=256),
    ],
)
def test_invalid_overlap_is_rejected(cfg):
    with pytest.raises(StftConfigError):
        validate_config(cfg)


def test_input_shorter_than_window():
    with pytest.raises(StftConfigError, match="longer than one window"):
        stft(Waveform(np.zeros(200), 8000), CFG)


def test_istft_explicit_length_pads(rng):
    w = Waveform(rng.standard_normal(1000), 8000)
    back = istft(stft(w, CFG), length=1200)
    assert back.length == 1200
    np.testing.assert_allclose(back.samples[0, :1000], w.samples[0], atol=1e-9)


def test_spectrogram_rejects_wrong_bin_count():
    with pytest.raises(ShapeMismatchError):
        ComplexSpectrogram(np.zeros((4, 100, 1), dtype=complex), CFG)
