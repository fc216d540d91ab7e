"""
Audio port: multichannel WAV files in and out of ``Waveform`` buffers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf

from mask_beamforming.errors import AudioFormatError

# soundfile subtype per supported encoding.
ENCODINGS = {"float32": "FLOAT", "pcm16": "PCM_16"}


@dataclass(frozen=True, eq=False)
class Waveform:
    """
    Multichannel time-domain signal.

    Samples may exceed the [-1, 1] full-scale range in memory, as
    beamformer estimates do; :func:`write_wav` enforces it on output.

    :ivar samples: Array of shape (channels, length), float64.
    :ivar sample_rate: Sampling rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise AudioFormatError(
                f"samples must be (channels, length), got {samples.shape}"
            )
        if int(self.sample_rate) <= 0:
            raise AudioFormatError(
                f"sample_rate must be > 0, got {self.sample_rate}"
            )
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("samples contain NaN or Inf")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        """Number of channels."""
        return int(self.samples.shape[0])

    @property
    def length(self) -> int:
        """Number of samples per channel."""
        return int(self.samples.shape[1])

    def channel(self, index: int) -> "Waveform":
        """
        Single-channel view of one channel.

        :param index: Channel index.
        :type index: int
        :return: Mono waveform.
        :rtype: Waveform
        """
        return Waveform(self.samples[index : index + 1], self.sample_rate)


def _validate_file_exists(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise AudioFormatError(f"file not found: {p}")
    return p


def read_wav(path: str | Path) -> Waveform:
    """
    Read a PCM16 or float32 RIFF/WAVE file.

    :param path: The path to the WAV file.
    :type path: str | Path
    :return: Normalized float samples with the channel count preserved.
    :rtype: Waveform
    :raises AudioFormatError: If the file is unreadable, uses another
        encoding or holds no samples.
    """
    p = _validate_file_exists(path)
    try:
        info = sf.info(str(p))
    except (RuntimeError, sf.SoundFileError) as exc:
        raise AudioFormatError(f"unreadable audio file {p}: {exc}") from exc
    if info.format != "WAV" or info.subtype not in ENCODINGS.values():
        raise AudioFormatError(
            f"{p}: unsupported encoding {info.format}/{info.subtype}; "
            "expected WAV with PCM_16 or FLOAT"
        )
    data, rate = sf.read(str(p), dtype="float64", always_2d=True)
    if data.shape[0] == 0:
        raise AudioFormatError(f"{p}: zero-length audio")
    return Waveform(np.ascontiguousarray(data.T), int(rate))


def write_wav(
    path: str | Path, w: Waveform, encoding: str = "float32"
) -> None:
    """
    Write a waveform as a little-endian RIFF/WAVE file.

    :param path: Destination path; parent directories are created.
    :type path: str | Path
    :param w: The waveform to write.
    :type w: Waveform
    :param encoding: ``"float32"`` (default) or ``"pcm16"``.
    :type encoding: str
    :raises AudioFormatError: On unknown encoding or samples beyond +-1.
    :raises OSError: If the file cannot be written.
    """
    if encoding not in ENCODINGS:
        raise AudioFormatError(
            f"encoding must be one of {tuple(ENCODINGS)}, got {encoding!r}"
        )
    peak = float(np.max(np.abs(w.samples))) if w.samples.size else 0.0
    if peak > 1.0:
        raise AudioFormatError(
            f"samples exceed full scale (peak {peak:.4f}); scale before "
            "writing"
        )
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    try:
        sf.write(
            str(p),
            w.samples.T,
            w.sample_rate,
            subtype=ENCODINGS[encoding],
            format="WAV",
        )
    except (RuntimeError, sf.SoundFileError) as exc:
        raise OSError(f"failed to write {p}: {exc}") from exc


def require_sample_rate(w: Waveform, sample_rate: int) -> Waveform:
    """
    Reject waveforms at any rate other than ``sample_rate``.

    No resampling is performed.

    :param w: The waveform to check.
    :type w: Waveform
    :param sample_rate: Required rate in Hz.
    :type sample_rate: int
    :return: ``w`` unchanged.
    :rtype: Waveform
    :raises AudioFormatError: On a rate mismatch.
    """
    if w.sample_rate != int(sample_rate):
        raise AudioFormatError(
            f"expected {sample_rate} Hz audio, got {w.sample_rate} Hz; "
            "resample during data preparation"
        )
    return w
