"""
Synthetic multichannel scenes.

Sources sit on a circle around the centre of a linear microphone
arrangement. Each impulse response is a fractional-delay direct path
(1/r attenuation, 343 m/s) plus an exponentially decaying Gaussian tail
whose envelope reaches -60 dB at ``rt60`` and whose energy sets the
direct-to-reverberant ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, fftconvolve, get_window, sosfilt

from mask_beamforming.config import CONDITIONS, SceneConfig, SceneSetConfig
from mask_beamforming.errors import ShapeMismatchError
from mask_beamforming.ports.audio import Waveform

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
# Half width in samples of the windowed-sinc direct path.
SINC_HALF_WIDTH = 32
# ln(1000): amplitude decay reaching -60 dB.
_DECAY_60DB = 6.908
# Mixtures louder than this are scaled down with their images.
MAX_PEAK = 0.99
# Independent seed streams for training and evaluation scenes.
SPLIT_STREAMS = {"test": 0, "train": 1}


@dataclass(frozen=True, eq=False)
class Scene:
    """
    A mixture and the images that sum to it.

    :ivar mixture: M-channel observation.
    :ivar images: One M-channel image per source.
    :ivar config: Scene configuration.
    :ivar mic_indices: Microphones picked from the arrangement.
    :ivar azimuths_deg: Source azimuths.
    """

    mixture: Waveform
    images: tuple[Waveform, ...]
    config: SceneConfig
    mic_indices: tuple[int, ...] = ()
    azimuths_deg: tuple[float, ...] = ()

    @property
    def n_sources(self) -> int:
        """Number of sources N."""
        return len(self.images)

    def metadata(self) -> dict:
        """
        JSON-ready description of the scene.

        :return: Config, microphones and azimuths.
        :rtype: dict
        """
        return {
            "config": self.config.to_dict(),
            "mic_indices": list(self.mic_indices),
            "azimuths_deg": list(self.azimuths_deg),
        }


def mic_positions(spacing_cm: Sequence[float]) -> np.ndarray:
    """
    x coordinates in metres of a linear arrangement, centred on 0.

    :param spacing_cm: Adjacent spacings in centimetres.
    :type spacing_cm: Sequence[float]
    :return: Array of ``len(spacing_cm) + 1`` positions.
    :rtype: np.ndarray
    """
    x = np.concatenate([[0.0], np.cumsum(spacing_cm)]) / 100.0
    return x - x.mean()


def select_microphones(cfg: SceneConfig, rng: np.random.Generator):
    """
    Microphones used by a scene.

    :param cfg: Scene configuration.
    :type cfg: SceneConfig
    :param rng: Scene generator.
    :type rng: np.random.Generator
    :return: Sorted indices into the arrangement.
    :rtype: tuple[int, ...]
    """
    total = len(cfg.mic_spacing_cm) + 1
    if not cfg.random_mic_pair:
        return tuple(range(cfg.n_mics))
    picked = rng.choice(total, size=cfg.n_mics, replace=False)
    return tuple(int(i) for i in np.sort(picked))


def draw_azimuths(cfg: SceneConfig, rng: np.random.Generator):
    """
    Source azimuths in [0, 180] degrees, at least
    ``min_separation_deg`` apart.
    """
    if cfg.azimuths_deg is not None:
        return tuple(float(a) for a in cfg.azimuths_deg)
    gap = cfg.min_separation_deg
    if gap * (cfg.n_sources - 1) > 180.0:
        raise ValueError(
            f"{cfg.n_sources} sources cannot be {gap} degrees apart"
        )
    while True:
        azimuths = np.sort(rng.uniform(0.0, 180.0, cfg.n_sources))
        if cfg.n_sources == 1 or np.min(np.diff(azimuths)) >= gap:
            return tuple(float(a) for a in rng.permutation(azimuths))


def fractional_delay(delay: float, length: int) -> np.ndarray:
    """
    Hann-windowed sinc delaying by ``delay`` samples.

    :param delay: Delay in samples (>= SINC_HALF_WIDTH for a full tap
        set; earlier taps are cut).
    :type delay: float
    :param length: Filter length.
    :type length: int
    :return: Taps of length ``length``.
    :rtype: np.ndarray
    """
    n = np.arange(length)
    offset = n - delay
    taps = np.sinc(offset)
    support = np.abs(offset) < SINC_HALF_WIDTH
    window = 0.5 * (1.0 + np.cos(np.pi * offset / SINC_HALF_WIDTH))
    return np.where(support, taps * window, 0.0)


def synthesize_rir(
    cfg: SceneConfig,
    mics_x: np.ndarray,
    azimuth_deg: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Impulse responses from one source to each microphone.

    :param cfg: Scene configuration (distance, rt60, drr_db, rate).
    :type cfg: SceneConfig
    :param mics_x: Microphone x coordinates in metres.
    :type mics_x: np.ndarray
    :param azimuth_deg: Source azimuth.
    :type azimuth_deg: float
    :param rng: Generator for the diffuse tail.
    :type rng: np.random.Generator
    :return: Array (M, K).
    :rtype: np.ndarray
    """
    rate = cfg.sample_rate
    angle = math.radians(azimuth_deg)
    source = cfg.distance * np.array([math.cos(angle), math.sin(angle)])
    ranges = np.hypot(source[0] - mics_x, source[1])
    delays = ranges / SPEED_OF_SOUND * rate + SINC_HALF_WIDTH
    tail = int(math.ceil(1.5 * cfg.rt60 * rate))
    length = int(math.ceil(delays.max())) + SINC_HALF_WIDTH + tail + 1
    rir = np.zeros((len(mics_x), length))
    for m, (delay, r) in enumerate(zip(delays, ranges)):
        rir[m] = fractional_delay(delay, length) * (cfg.distance / r)
        if tail == 0:
            continue
        onset = int(math.floor(delay))
        k = np.arange(length - onset)
        envelope = np.exp(-_DECAY_60DB * k / (cfg.rt60 * rate))
        noise = rng.standard_normal(len(k)) * envelope
        direct = np.sum(rir[m] ** 2)
        target = direct / (10.0 ** (cfg.drr_db / 10.0))
        rir[m, onset:] += noise * math.sqrt(target / np.sum(noise**2))
    return rir


def synthetic_source(
    duration: float, sample_rate: int, rng: np.random.Generator
) -> Waveform:
    """
    Speech-like test signal: an amplitude-modulated harmonic series with
    a wandering pitch plus band-passed noise bursts.

    :param duration: Length in seconds.
    :type duration: float
    :param sample_rate: Sampling rate in Hz.
    :type sample_rate: int
    :param rng: Generator.
    :type rng: np.random.Generator
    :return: Mono waveform with peak 0.3.
    :rtype: Waveform
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(90.0, 250.0)
    vibrato = 1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    voiced = np.zeros(n)
    for k in range(1, int(0.5 * sample_rate / (f0 * 1.05))):
        voiced += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    syllable = rng.uniform(3.0, 5.0)
    envelope = np.clip(
        np.sin(2 * np.pi * syllable * t + rng.uniform(0, 2 * np.pi)), 0, None
    )
    nyquist = 0.5 * sample_rate
    sos = butter(
        4,
        [0.25 * nyquist, 0.85 * nyquist],
        btype="band",
        fs=sample_rate,
        output="sos",
    )
    bursts = sosfilt(sos, rng.standard_normal(n))
    gate = np.zeros(n)
    width = int(0.06 * sample_rate)
    taper = get_window("hann", width, fftbins=False)
    starts = rng.integers(0, max(n - width, 1), size=max(1, int(duration * 3)))
    for start in starts:
        gate[start : start + width] = taper[: n - start]
    signal = voiced * envelope + 0.5 * bursts * gate
    peak = np.max(np.abs(signal))
    return Waveform(0.3 * signal / (peak if peak > 0 else 1.0), sample_rate)


def mix_scene(
    sources: Sequence[Waveform],
    cfg: SceneConfig,
    rir: Optional[Sequence[np.ndarray]] = None,
) -> Scene:
    """
    Convolve mono sources with their impulse responses and sum.

    :param sources: One mono waveform per source.
    :type sources: Sequence[Waveform]
    :param cfg: Scene configuration.
    :type cfg: SceneConfig
    :param rir: Optional impulse responses, one (M, K) array per source;
        synthesized from the geometry when omitted.
    :type rir: Sequence[np.ndarray] | None
    :return: The scene; ``mixture == sum(images)``.
    :rtype: Scene
    :raises ShapeMismatchError: On source/RIR/microphone count mismatch.
    """
    if len(sources) != cfg.n_sources:
        raise ShapeMismatchError(
            f"{len(sources)} sources given for n_sources={cfg.n_sources}"
        )
    for source in sources:
        if source.channels != 1:
            raise ShapeMismatchError("sources must be mono")
        if source.sample_rate != cfg.sample_rate:
            raise ShapeMismatchError(
                f"source rate {source.sample_rate} differs from "
                f"{cfg.sample_rate}"
            )
    rng = np.random.default_rng(cfg.seed)
    mics = select_microphones(cfg, rng)
    azimuths = draw_azimuths(cfg, rng)
    if rir is None:
        mics_x = mic_positions(cfg.mic_spacing_cm)[list(mics)]
        rir = [synthesize_rir(cfg, mics_x, a, rng) for a in azimuths]
    elif len(rir) != cfg.n_sources:
        raise ShapeMismatchError(
            f"{len(rir)} impulse responses for {cfg.n_sources} sources"
        )
    length = max(source.length for source in sources)
    images = []
    for source, response in zip(sources, rir):
        response = np.atleast_2d(np.asarray(response, dtype=np.float64))
        if response.shape[0] != cfg.n_mics:
            raise ShapeMismatchError(
                f"impulse response has {response.shape[0]} channels for "
                f"{cfg.n_mics} microphones"
            )
        image = fftconvolve(source.samples, response, axes=-1)[:, :length]
        images.append(np.pad(image, ((0, 0), (0, length - image.shape[1]))))
    mixture = np.sum(images, axis=0)
    peak = np.max(np.abs(mixture))
    if peak > MAX_PEAK:
        gain = MAX_PEAK / peak
        images = [image * gain for image in images]
        mixture = mixture * gain
    return Scene(
        mixture=Waveform(mixture, cfg.sample_rate),
        images=tuple(Waveform(image, cfg.sample_rate) for image in images),
        config=cfg,
        mic_indices=tuple(mics),
        azimuths_deg=tuple(azimuths),
    )


def scene_configs(
    settings: SceneSetConfig, seed: int = 0
) -> list[SceneConfig]:
    """
    Per-scene configurations with independent child seeds.

    The ``train`` condition draws from its own seed stream, so training
    and evaluation scenes differ even under the same master seed.

    :param settings: Scene set settings.
    :type settings: SceneSetConfig
    :param seed: Master seed.
    :type seed: int
    :return: ``settings.count`` configurations.
    :rtype: list[SceneConfig]
    """
    split = "train" if settings.condition == "train" else "test"
    children = np.random.SeedSequence(
        seed, spawn_key=(SPLIT_STREAMS[split],)
    ).spawn(settings.count)
    configs = []
    for child in children:
        rng = np.random.default_rng(child)
        cfg = replace(settings.scene, seed=int(child.generate_state(1)[0]))
        if settings.condition is not None:
            preset = CONDITIONS[settings.condition]
            arrangements = preset["arrangements"]
            spacing = arrangements[int(rng.integers(len(arrangements)))]
            cfg = replace(
                cfg, mic_spacing_cm=tuple(spacing), rt60=preset["rt60"]
            )
        configs.append(cfg)
    return configs


def fit_duration(source: Waveform, duration: float) -> Waveform:
    """
    First channel of ``source`` cut or zero-padded to ``duration``.

    :param source: Recorded waveform.
    :type source: Waveform
    :param duration: Target length in seconds.
    :type duration: float
    :return: Mono waveform of ``round(duration * rate)`` samples.
    :rtype: Waveform
    """
    n = int(round(duration * source.sample_rate))
    samples = source.samples[0, :n]
    return Waveform(np.pad(samples, (0, n - samples.size)), source.sample_rate)


def generate_scenes(
    settings: SceneSetConfig,
    seed: int = 0,
    sources: Optional[Sequence[Waveform]] = None,
    rir: Optional[Sequence[np.ndarray]] = None,
) -> list[Scene]:
    """
    Deterministic set of scenes.

    Without a source pool every scene gets synthetic sources; with one,
    each scene draws ``n_sources`` distinct recordings from it.

    :param settings: Scene set settings.
    :type settings: SceneSetConfig
    :param seed: Master seed.
    :type seed: int
    :param sources: Optional pool of recorded sources.
    :type sources: Sequence[Waveform] | None
    :param rir: Optional impulse responses shared by every scene, one
        (M, K) array per source.
    :type rir: Sequence[np.ndarray] | None
    :return: ``settings.count`` scenes.
    :rtype: list[Scene]
    :raises ShapeMismatchError: If the pool holds fewer recordings than
        sources per scene.
    """
    n_sources = settings.scene.n_sources
    if sources is not None and len(sources) < n_sources:
        raise ShapeMismatchError(
            f"{len(sources)} recordings for {n_sources} sources per scene"
        )
    scenes = []
    for index, cfg in enumerate(scene_configs(settings, seed)):
        rng = np.random.default_rng([cfg.seed, 1])
        if sources is None:
            picked = [
                synthetic_source(cfg.duration, cfg.sample_rate, rng)
                for _ in range(cfg.n_sources)
            ]
        else:
            chosen = rng.choice(len(sources), cfg.n_sources, replace=False)
            picked = [fit_duration(sources[i], cfg.duration) for i in chosen]
        scenes.append(mix_scene(picked, cfg, rir))
        logger.debug("scene %d: %s", index, scenes[-1].metadata())
    return scenes
