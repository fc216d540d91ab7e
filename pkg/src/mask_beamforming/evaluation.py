"""
Separation metrics: BSS-eval SDR/SIR and cepstral distortion.

SDR and SIR follow the time-invariant-filter decomposition: the estimate
is projected on ``filter_len`` delayed copies of its reference (target
part) and of all references (target plus interference); the remainder is
the artifact. Values are capped at +-100 dB.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

from mask_beamforming.config import EvaluationSettings, StftConfig
from mask_beamforming.errors import ShapeMismatchError, SilentReferenceError
from mask_beamforming.losses import Permutation
from mask_beamforming.ports.audio import Waveform
from mask_beamforming.transform import stft

logger = logging.getLogger(__name__)

DB_CAP = 100.0
# Guard inside the log-magnitude spectrum of the cepstrum.
LOG_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class MetricReport:
    """
    Metrics per reference source.

    :ivar sdr: dB, one per reference.
    :ivar sir: dB, one per reference.
    :ivar cd: dB, one per reference.
    :ivar permutation: ``mapping[j]`` is the estimate matched to
        reference ``j``.
    """

    sdr: np.ndarray
    sir: np.ndarray
    cd: np.ndarray
    permutation: Permutation

    def rows(self) -> list[dict]:
        """
        One record per reference source.

        :return: Dicts with source, estimate, sdr, sir and cd.
        :rtype: list[dict]
        """
        return [
            {
                "source": j,
                "estimate": self.permutation.mapping[j],
                "sdr": float(self.sdr[j]),
                "sir": float(self.sir[j]),
                "cd": float(self.cd[j]),
            }
            for j in range(len(self.sdr))
        ]


def _db(num: float, den: float) -> float:
    if den <= 0.0:
        return DB_CAP
    if num <= 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def _as_sources(w: Waveform | np.ndarray) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.atleast_2d(np.asarray(w, dtype=np.float64))


class _Projector:
    """Least-squares projection on delayed copies of the references."""

    def __init__(self, references: np.ndarray, filter_len: int) -> None:
        self.references = references
        self.filter_len = filter_len
        n_src, length = references.shape
        self.n_fft = int(2 ** np.ceil(np.log2(length + filter_len - 1)))
        self.spectra = np.fft.rfft(references, n=self.n_fft)
        gram = np.zeros((n_src * filter_len, n_src * filter_len))
        for i, j in itertools.product(range(n_src), repeat=2):
            if j < i:
                continue
            corr = np.fft.irfft(
                self.spectra[j] * np.conj(self.spectra[i]), n=self.n_fft
            )
            block = scipy.linalg.toeplitz(
                np.hstack((corr[0], corr[-1 : -filter_len : -1])),
                r=corr[:filter_len],
            )
            rows = slice(i * filter_len, (i + 1) * filter_len)
            cols = slice(j * filter_len, (j + 1) * filter_len)
            gram[rows, cols] = block.T
            gram[cols, rows] = block
        self.gram = gram

    def coefficients(self, estimate: np.ndarray) -> np.ndarray:
        spectrum = np.fft.rfft(estimate, n=self.n_fft)
        corr = np.fft.irfft(
            self.spectra * np.conj(spectrum)[None], n=self.n_fft
        )
        rhs = np.hstack(
            (corr[:, :1], corr[:, -1 : -self.filter_len : -1])
        ).reshape(-1)
        try:
            coef = scipy.linalg.solve(self.gram, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            coef = np.linalg.lstsq(self.gram, rhs, rcond=None)[0]
        return coef.reshape(len(self.references), self.filter_len)

    def project(self, estimate: np.ndarray) -> np.ndarray:
        """Filtered references closest to ``estimate`` (padded length)."""
        coef = self.coefficients(estimate)
        length = self.references.shape[1]
        out = np.zeros(length + self.filter_len - 1)
        for taps, reference in zip(coef, self.references):
            out += fftconvolve(taps, reference)
        return out


def _pairwise(estimates: np.ndarray, references: np.ndarray, filter_len: int):
    n_src = references.shape[0]
    joint = _Projector(references, filter_len)
    singles = [
        _Projector(references[j : j + 1], filter_len) for j in range(n_src)
    ]
    sdr = np.empty((n_src, n_src))
    sir = np.empty((n_src, n_src))
    for i, estimate in enumerate(estimates):
        padded = np.pad(estimate, (0, filter_len - 1))
        total = joint.project(estimate)
        artifact = padded - total
        for j, single in enumerate(singles):
            target = single.project(estimate)
            interference = total - target
            sdr[i, j] = _db(
                np.sum(target**2), np.sum((interference + artifact) ** 2)
            )
            sir[i, j] = _db(np.sum(target**2), np.sum(interference**2))
    return sdr, sir


def bss_eval(
    est: Waveform | np.ndarray,
    ref: Waveform | np.ndarray,
    filter_len: int = 512,
) -> tuple[np.ndarray, np.ndarray, Permutation]:
    """
    SDR and SIR per reference under the best assignment.

    :param est: Estimates, one channel (row) per source.
    :type est: Waveform | np.ndarray
    :param ref: References, one channel (row) per source.
    :type ref: Waveform | np.ndarray
    :param filter_len: Taps of the allowed distortion filter.
    :type filter_len: int
    :return: ``(sdr, sir, permutation)`` ordered by reference; the
        permutation maximizes mean SIR.
    :rtype: tuple[np.ndarray, np.ndarray, Permutation]
    :raises ShapeMismatchError: On different source counts or lengths.
    :raises SilentReferenceError: If a reference is all zeros.
    """
    estimates = _as_sources(est)
    references = _as_sources(ref)
    if estimates.shape != references.shape:
        raise ShapeMismatchError(
            f"estimates {estimates.shape} and references "
            f"{references.shape} differ"
        )
    silent = ~np.any(references != 0.0, axis=1)
    if np.any(silent):
        raise SilentReferenceError(
            f"reference sources {np.flatnonzero(silent).tolist()} are silent"
        )
    n_src = references.shape[0]
    sdr, sir = _pairwise(estimates, references, filter_len)
    best: Optional[tuple[float, tuple[int, ...]]] = None
    for perm in itertools.permutations(range(n_src)):
        score = float(np.mean([sir[perm[j], j] for j in range(n_src)]))
        if best is None or score > best[0]:
            best = (score, perm)
    assert best is not None
    mapping = best[1]
    rows = np.arange(n_src)
    picked = np.asarray(mapping)
    return sdr[picked, rows], sir[picked, rows], Permutation(mapping)


def cepstra(w: Waveform, stft_config: StftConfig, order: int = 12):
    """
    Real cepstra and frame energies of a mono signal.

    :param w: Mono waveform.
    :type w: Waveform
    :param stft_config: Framing used for the spectra.
    :type stft_config: StftConfig
    :param order: Highest coefficient kept.
    :type order: int
    :return: Coefficients 1..order (T, order) and frame energies in dB.
    """
    spectrum = np.abs(stft(w, stft_config).values[..., 0])
    log_mag = np.log(np.maximum(spectrum, LOG_FLOOR))
    cep = np.fft.irfft(log_mag, n=stft_config.fft_size, axis=-1)
    energy = np.sum(spectrum**2, axis=-1)
    with np.errstate(divide="ignore"):
        energy_db = 10.0 * np.log10(energy)
    return cep[:, 1 : order + 1], energy_db


def cepstrum_distortion(
    est: Waveform,
    ref: Waveform,
    stft_config: StftConfig | None = None,
    order: int = 12,
    gate_db: float = 40.0,
) -> float:
    """
    Mean cepstral distance over energetic frames.

    ``(10 / ln 10) * sqrt(2 * sum_k (c_k - c'_k)^2)`` over coefficients
    1..order, averaged over frames whose energy (the louder of the two
    signals) lies within ``gate_db`` of the loudest frame.

    :param est: Mono estimate.
    :type est: Waveform
    :param ref: Mono reference of the same length.
    :type ref: Waveform
    :param stft_config: Framing; defaults to 256/64 Hann.
    :type stft_config: StftConfig | None
    :param order: Highest cepstral coefficient.
    :type order: int
    :param gate_db: Energy gate below the loudest frame.
    :type gate_db: float
    :return: Distortion in dB (>= 0).
    :rtype: float
    :raises ShapeMismatchError: On different lengths or channel counts.
    :raises SilentReferenceError: If both signals are silent.
    """
    if est.samples.shape != ref.samples.shape or est.channels != 1:
        raise ShapeMismatchError(
            f"cepstrum_distortion needs equal mono signals, got "
            f"{est.samples.shape} and {ref.samples.shape}"
        )
    cfg = stft_config or StftConfig()
    cep_est, energy_est = cepstra(est, cfg, order)
    cep_ref, energy_ref = cepstra(ref, cfg, order)
    energy = np.maximum(energy_est, energy_ref)
    if not np.any(np.isfinite(energy)):
        raise SilentReferenceError("both signals are silent")
    voiced = energy > np.max(energy) - gate_db
    distance = np.sqrt(2.0 * np.sum((cep_est - cep_ref) ** 2, axis=-1))
    return float((10.0 / np.log(10.0)) * np.mean(distance[voiced]))


def _trim(samples: np.ndarray, margin: int) -> np.ndarray:
    if margin == 0 or samples.shape[-1] <= 2 * margin:
        return samples
    return samples[..., margin:-margin]


def evaluate_separation(
    est: Waveform,
    ref: Waveform,
    mixture_ref: Waveform,
    stft_config: StftConfig | None = None,
    settings: EvaluationSettings | None = None,
) -> tuple[MetricReport, MetricReport]:
    """
    Score separated signals and the unprocessed mixture.

    :param est: Estimates, one channel per source.
    :type est: Waveform
    :param ref: Reference images at the reference microphone.
    :type ref: Waveform
    :param mixture_ref: Mixture at the reference microphone (mono).
    :type mixture_ref: Waveform
    :param stft_config: Framing of the CD metric and edge trimming.
    :type stft_config: StftConfig | None
    :param settings: Metric settings.
    :type settings: EvaluationSettings | None
    :return: Reports for the estimates and for the mixture baseline.
    :rtype: tuple[MetricReport, MetricReport]
    """
    cfg = stft_config or StftConfig()
    settings = settings or EvaluationSettings()
    margin = cfg.window_length if settings.trim_edges else 0
    estimates = _trim(est.samples, margin)
    references = _trim(ref.samples, margin)
    mixture = np.repeat(
        _trim(mixture_ref.samples, margin), references.shape[0], axis=0
    )
    reports = []
    for candidate in (estimates, mixture):
        sdr, sir, perm = bss_eval(candidate, references, settings.filter_len)
        cd = np.array(
            [
                cepstrum_distortion(
                    Waveform(candidate[perm.mapping[j]], ref.sample_rate),
                    Waveform(references[j], ref.sample_rate),
                    cfg,
                    settings.cd_order,
                    settings.cd_gate_db,
                )
                for j in range(references.shape[0])
            ]
        )
        reports.append(MetricReport(sdr=sdr, sir=sir, cd=cd, permutation=perm))
    logger.debug(
        "SDR %s (mixture %s)",
        np.round(reports[0].sdr, 2),
        np.round(reports[1].sdr, 2),
    )
    return reports[0], reports[1]
