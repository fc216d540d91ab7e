"""
STFT analysis and overlap-add synthesis.

Frames are centred: ``window_length // 2`` samples of reflection padding on
both sides and zero extension at the tail, so every input sample is covered
and ``T = ceil((length + hop) / hop)``. Synthesis is weighted overlap-add
normalized by the summed squared window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import check_COLA, get_window

from mask_beamforming.config import StftConfig
from mask_beamforming.errors import ShapeMismatchError, StftConfigError
from mask_beamforming.ports.audio import Waveform

_SCIPY_WINDOWS = {"hann": "hann", "rect": "boxcar"}


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """
    One-sided multichannel STFT.

    :ivar values: Complex array (T, F, M), or (T, F, N, M) for stacked
        per-source images.
    :ivar config: Analysis settings.
    :ivar length: Length in samples of the analysed waveform.
    :ivar sample_rate: Sampling rate of the analysed waveform.
    """

    values: np.ndarray
    config: StftConfig
    length: Optional[int] = None
    sample_rate: Optional[int] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim not in (3, 4):
            raise ShapeMismatchError(
                f"values must be (T, F, M) or (T, F, N, M), got {values.shape}"
            )
        if values.shape[1] != self.config.n_freq:
            raise ShapeMismatchError(
                f"expected F={self.config.n_freq} bins for fft_size "
                f"{self.config.fft_size}, got {values.shape[1]}"
            )
        if not np.all(np.isfinite(values)):
            raise ShapeMismatchError("spectrogram contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        """Number of frames T."""
        return int(self.values.shape[0])

    @property
    def n_channels(self) -> int:
        """Number of channels M."""
        return int(self.values.shape[-1])


def analysis_window(cfg: StftConfig) -> np.ndarray:
    """
    Periodic analysis taper of ``cfg.window_length`` samples.

    :param cfg: STFT settings.
    :type cfg: StftConfig
    :return: The window.
    :rtype: np.ndarray
    """
    return get_window(_SCIPY_WINDOWS[cfg.window], cfg.window_length)


def validate_config(cfg: StftConfig) -> np.ndarray:
    """
    Check the constant-overlap-add constraint and return the window.

    :param cfg: STFT settings.
    :type cfg: StftConfig
    :return: The analysis window.
    :rtype: np.ndarray
    :raises StftConfigError: If hop does not divide the window or the
        taper is not COLA at that overlap.
    """
    if cfg.hop > cfg.window_length or cfg.window_length % cfg.hop:
        raise StftConfigError(
            f"hop ({cfg.hop}) must divide window_length "
            f"({cfg.window_length})"
        )
    window = analysis_window(cfg)
    if not check_COLA(
        window, cfg.window_length, cfg.window_length - cfg.hop
    ):
        raise StftConfigError(
            f"{cfg.window} window of {cfg.window_length} samples with hop "
            f"{cfg.hop} violates constant overlap-add"
        )
    return window


def n_frames(length: int, cfg: StftConfig) -> int:
    """
    Frame count produced by :func:`stft` for ``length`` samples.

    :param length: Signal length in samples.
    :type length: int
    :param cfg: STFT settings.
    :type cfg: StftConfig
    :return: ``ceil((length + hop) / hop)``.
    :rtype: int
    """
    return int(math.ceil((length + cfg.hop) / cfg.hop))


def stft(w: Waveform, cfg: StftConfig) -> ComplexSpectrogram:
    """
    Short-time Fourier transform of every channel.

    :param w: Input waveform.
    :type w: Waveform
    :param cfg: STFT settings.
    :type cfg: StftConfig
    :return: Spectrogram of shape (T, F, M).
    :rtype: ComplexSpectrogram
    :raises StftConfigError: On a COLA violation or input not longer than
        one window.
    """
    window = validate_config(cfg)
    if w.length <= cfg.window_length:
        raise StftConfigError(
            f"input of {w.length} samples is not longer than one window "
            f"({cfg.window_length})"
        )
    half = cfg.window_length // 2
    frames_total = n_frames(w.length, cfg)
    padded = np.pad(w.samples, ((0, 0), (half, half)), mode="reflect")
    needed = (frames_total - 1) * cfg.hop + cfg.window_length
    padded = np.pad(padded, ((0, 0), (0, needed - padded.shape[1])))
    frames = sliding_window_view(padded, cfg.window_length, axis=-1)
    frames = frames[:, :: cfg.hop][:, :frames_total]
    spec = np.fft.rfft(frames * window, n=cfg.fft_size, axis=-1)
    return ComplexSpectrogram(
        values=np.transpose(spec, (1, 2, 0)),
        config=cfg,
        length=w.length,
        sample_rate=w.sample_rate,
    )


def stft_sources(images: Sequence[Waveform], cfg: StftConfig) -> np.ndarray:
    """
    Stack the STFTs of per-source multichannel images.

    :param images: One M-channel waveform per source.
    :type images: Sequence[Waveform]
    :param cfg: STFT settings.
    :type cfg: StftConfig
    :return: Complex array (T, F, N, M).
    :rtype: np.ndarray
    """
    if not images:
        raise ShapeMismatchError("at least one source image is required")
    return np.stack([stft(image, cfg).values for image in images], axis=2)


def istft(
    s: ComplexSpectrogram, length: int | None = None
) -> Waveform:
    """
    Weighted overlap-add synthesis.

    :param s: Spectrogram of shape (T, F, M).
    :type s: ComplexSpectrogram
    :param length: Output length; defaults to the analysed length.
    :type length: int | None
    :return: Real waveform with M channels.
    :rtype: Waveform
    :raises ShapeMismatchError: If the values are not (T, F, M).
    """
    cfg = s.config
    window = validate_config(cfg)
    if s.values.ndim != 3:
        raise ShapeMismatchError(
            f"istft expects (T, F, M) values, got {s.values.shape}"
        )
    half = cfg.window_length // 2
    T = s.n_frames
    frames = np.fft.irfft(
        np.transpose(s.values, (2, 0, 1)), n=cfg.fft_size, axis=-1
    )[..., : cfg.window_length]
    frames = frames * window
    total = (T - 1) * cfg.hop + cfg.window_length
    out = np.zeros((s.n_channels, total))
    norm = np.zeros(total)
    squared = window**2
    for t in range(T):
        start = t * cfg.hop
        out[:, start : start + cfg.window_length] += frames[:, t]
        norm[start : start + cfg.window_length] += squared
    out /= np.where(norm > 1e-10, norm, 1.0)
    if length is None:
        length = s.length if s.length is not None else total - 2 * half
    out = out[:, half : half + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return Waveform(out, s.sample_rate or 1)
