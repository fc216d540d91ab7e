from __future__ import annotations

import numpy as np
import pytest
from scipy.signal import fftconvolve

from mask_beamforming.config import SceneConfig, SceneSetConfig, StftConfig
from mask_beamforming.errors import ShapeMismatchError
from mask_beamforming.ports.audio import Waveform
from mask_beamforming.scenes import (
    SINC_HALF_WIDTH,
    SPEED_OF_SOUND,
    draw_azimuths,
    fit_duration,
    fractional_delay,
    generate_scenes,
    mic_positions,
    mix_scene,
    scene_configs,
    select_microphones,
    synthesize_rir,
    synthetic_source,
)
from mask_beamforming.transform import stft, stft_sources


def test_mixture_is_sum_of_images(scene_factory):
    scene = scene_factory(rt60=0.2)
    total = np.sum([image.samples for image in scene.images], axis=0)
    np.testing.assert_allclose(scene.mixture.samples, total, atol=1e-12)
    assert scene.mixture.channels == 2 and scene.n_sources == 2


def test_single_source_mixture_equals_image(scene_factory):
    scene = scene_factory(n_sources=1, rt60=0.1)
    np.testing.assert_array_equal(
        scene.mixture.samples, scene.images[0].samples
    )


def test_anechoic_image_is_delayed_source(rng):
    cfg = SceneConfig(
        n_sources=1,
        rt60=0.0,
        azimuths_deg=(70.0,),
        random_mic_pair=False,
        duration=0.5,
    )
    source = synthetic_source(0.5, 8000, rng)
    scene = mix_scene([source], cfg)
    mics_x = mic_positions(cfg.mic_spacing_cm)[:2]
    angle = np.radians(70.0)
    ranges = np.hypot(np.cos(angle) - mics_x, np.sin(angle))
    for m, r in enumerate(ranges):
        delay = r / SPEED_OF_SOUND * 8000 + SINC_HALF_WIDTH
        taps = fractional_delay(delay, 200) / r
        expected = fftconvolve(source.samples[0], taps)[: source.length]
        np.testing.assert_allclose(
            scene.images[0].samples[m], expected, atol=1e-9
        )


def test_fractional_delay_integer_is_impulse():
    taps = fractional_delay(40.0, 100)
    expected = np.zeros(100)
    expected[40] = 1.0
    np.testing.assert_allclose(taps, expected, atol=1e-12)


def test_rir_decay_matches_rt60():
    cfg = SceneConfig(rt60=0.3, n_mics=1)
    rir = synthesize_rir(cfg, np.array([0.0]), 90.0,
                         np.random.default_rng(0))[0]
    energy = np.cumsum((rir**2)[::-1])[::-1]
    edc = 10 * np.log10(energy / energy[0])
    fit = (edc <= -5.0) & (edc >= -25.0)
    slope = np.polyfit(np.arange(len(rir))[fit] / 8000.0, edc[fit], 1)[0]
    assert -60.0 / slope == pytest.approx(0.3, rel=0.2)


def test_rir_direct_to_reverberant_ratio():
    cfg = SceneConfig(rt60=0.2, n_mics=1, drr_db=6.0)
    rir = synthesize_rir(cfg, np.array([0.0]), 45.0,
                         np.random.default_rng(1))[0]
    direct = fractional_delay(SINC_HALF_WIDTH + 8000 / SPEED_OF_SOUND,
                              len(rir))
    tail = rir - direct
    drr = 10 * np.log10(np.sum(direct**2) / np.sum(tail**2))
    assert drr == pytest.approx(6.0, abs=1e-6)


def test_scenes_are_reproducible():
    settings = SceneSetConfig(count=2, scene=SceneConfig(duration=0.5))
    a = generate_scenes(settings, seed=3)
    b = generate_scenes(settings, seed=3)
    c = generate_scenes(settings, seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.mixture.samples, y.mixture.samples)
        assert x.metadata() == y.metadata()
    assert not np.array_equal(a[0].mixture.samples, c[0].mixture.samples)
    assert a[0].config.seed != a[1].config.seed


def test_training_scenes_differ_from_evaluation_scenes():
    scene = SceneConfig(duration=0.5)
    train = generate_scenes(
        SceneSetConfig(count=3, condition="train", scene=scene), seed=0
    )
    test = generate_scenes(
        SceneSetConfig(count=3, condition="condition1", scene=scene), seed=0
    )
    train_seeds = {s.config.seed for s in train}
    assert train_seeds.isdisjoint(s.config.seed for s in test)
    for a, b in zip(train, test):
        assert not np.allclose(a.mixture.samples, b.mixture.samples)


def test_condition_presets_override_geometry():
    settings = SceneSetConfig(
        count=4, condition="condition3", scene=SceneConfig(duration=0.5)
    )
    for cfg in scene_configs(settings, seed=0):
        assert cfg.rt60 == 0.36
        assert cfg.mic_spacing_cm == (4, 4, 4, 8, 4, 4, 4)


def test_microphones_and_azimuths(rng):
    cfg = SceneConfig(n_sources=3, min_separation_deg=30.0)
    for _ in range(20):
        mics = select_microphones(cfg, rng)
        assert len(set(mics)) == 2 and all(0 <= m < 8 for m in mics)
        azimuths = np.sort(draw_azimuths(cfg, rng))
        assert np.all((azimuths >= 0) & (azimuths <= 180))
        assert np.min(np.diff(azimuths)) >= 30.0
    fixed = SceneConfig(random_mic_pair=False, n_mics=3)
    assert select_microphones(fixed, rng) == (0, 1, 2)
    with pytest.raises(ValueError):
        draw_azimuths(SceneConfig(n_sources=4, min_separation_deg=90), rng)


def test_mic_positions_are_centred():
    x = mic_positions((3, 3, 3, 8, 3, 3, 3))
    assert len(x) == 8
    assert x.mean() == pytest.approx(0.0)
    assert x[-1] - x[0] == pytest.approx(0.26)


def test_mix_scene_validates_inputs(rng):
    cfg = SceneConfig(duration=0.5, random_mic_pair=False)
    sources = [synthetic_source(0.5, 8000, rng) for _ in range(2)]
    with pytest.raises(ShapeMismatchError):
        mix_scene(sources[:1], cfg)
    with pytest.raises(ShapeMismatchError):
        mix_scene(sources, cfg, rir=[np.ones((3, 10))] * 2)
    with pytest.raises(ShapeMismatchError):
        mix_scene([sources[0], Waveform(sources[1].samples, 16000)], cfg)
    scene = mix_scene(sources, cfg, rir=[np.ones((2, 1)), np.ones((2, 1))])
    np.testing.assert_allclose(
        scene.mixture.samples[0],
        sources[0].samples[0] + sources[1].samples[0],
    )


def test_loud_mixtures_are_scaled_with_images(rng):
    cfg = SceneConfig(duration=0.5, random_mic_pair=False)
    sources = [synthetic_source(0.5, 8000, rng) for _ in range(2)]
    loud = [np.full((2, 1), 4.0), np.full((2, 1), 4.0)]
    scene = mix_scene(sources, cfg, rir=loud)
    assert np.max(np.abs(scene.mixture.samples)) == pytest.approx(0.99)
    total = scene.images[0].samples + scene.images[1].samples
    np.testing.assert_allclose(scene.mixture.samples, total, atol=1e-12)


def test_stft_is_linear_over_images(scene_factory):
    scene = scene_factory(rt60=0.1)
    cfg = StftConfig()
    x = stft(scene.mixture, cfg).values
    c = stft_sources(scene.images, cfg)
    np.testing.assert_allclose(c.sum(axis=2), x, atol=1e-9)


def test_synthetic_source_level(rng):
    source = synthetic_source(1.0, 8000, rng)
    assert source.length == 8000
    assert np.max(np.abs(source.samples)) == pytest.approx(0.3)


def test_fit_duration_cuts_and_pads(rng):
    stereo = Waveform(rng.standard_normal((2, 1000)), 8000)
    short = fit_duration(stereo, 0.05)
    np.testing.assert_array_equal(short.samples[0], stereo.samples[0, :400])
    long = fit_duration(stereo, 0.25)
    assert long.length == 2000 and np.all(long.samples[0, 1000:] == 0.0)


def test_recorded_pool_and_shared_responses(rng):
    pool = [synthetic_source(0.4, 8000, rng) for _ in range(4)]
    padded = [fit_duration(w, 0.5).samples[0] for w in pool]
    responses = [np.array([[1.0], [0.5]]), np.array([[0.25], [1.0]])]
    settings = SceneSetConfig(count=3, scene=SceneConfig(duration=0.5))
    scenes = generate_scenes(settings, seed=2, sources=pool, rir=responses)
    for scene in scenes:
        assert scene.mixture.length == 4000
        first = scene.images[0].samples
        second = scene.images[1].samples
        np.testing.assert_allclose(first[1], 0.5 * first[0])
        i = [k for k, p in enumerate(padded) if np.allclose(first[0], p)]
        j = [
            k
            for k, p in enumerate(padded)
            if np.allclose(second[0], 0.25 * p)
        ]
        assert len(i) == 1 and len(j) == 1 and i != j
    with pytest.raises(ShapeMismatchError):
        generate_scenes(settings, sources=pool[:1])
