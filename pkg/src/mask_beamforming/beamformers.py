"""
Beamformers built from mask-based spatial covariances.

MVDR, GEV and the time-invariant MWF produce one length-M filter per
(frequency, source); the time-varying MWF produces an M x M matrix per
(frame, frequency, source). All outputs are single-channel estimates at the
reference microphone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mask_beamforming.errors import (
    DegenerateTargetError,
    ShapeMismatchError,
)
from mask_beamforming.hermitian import (
    DEFAULT_LOADING,
    gevd_principal,
    herm_inverse,
    load,
    trace,
)
from mask_beamforming.masks import (
    ActivationTensor,
    ArrayLike,
    CovarianceSet,
    values_of,
)

logger = logging.getLogger(__name__)

KINDS = ("mvdr", "gev", "mwf_ti")
# MVDR traces below this magnitude cannot be normalized.
MIN_TRACE = 1e-12


@dataclass(frozen=True, eq=False)
class BeamformerBank:
    """
    Time-invariant filters.

    :ivar kind: ``"mvdr"``, ``"gev"`` or ``"mwf_ti"``.
    :ivar filters: Complex array (F, N, M); output is ``w^H x``.
    :ivar fallback: True where the reference selector ``e`` was used.
    """

    kind: str
    filters: np.ndarray
    fallback: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not np.all(np.isfinite(self.filters)):
            raise ValueError("beamformer filters contain NaN or Inf")


@dataclass(frozen=True, eq=False)
class TimeVaryingFilter:
    """
    Time-varying multichannel Wiener filter.

    :ivar matrices: Complex array (T, F, N, M, M).
    :ivar fallback: True at (t, f) where every activation was zero and
        ``I / N`` was used.
    """

    matrices: np.ndarray
    fallback: np.ndarray


def reference_vector(n_channels: int, ref_channel: int = 0) -> np.ndarray:
    """
    Selector ``e`` of the reference microphone.

    :param n_channels: Number of microphones M.
    :type n_channels: int
    :param ref_channel: Reference index.
    :type ref_channel: int
    :return: Complex one-hot vector of length M.
    :rtype: np.ndarray
    """
    e = np.zeros(n_channels, dtype=np.complex128)
    e[ref_channel] = 1.0
    return e


def _mvdr_filters(target, interf, loading, ref_channel):
    ratio = herm_inverse(interf, loading) @ target
    norm = trace(ratio)
    degenerate = np.abs(norm) < MIN_TRACE
    safe = np.where(degenerate, 1.0, norm)
    return ratio[..., :, ref_channel] / safe[..., None], degenerate


def mvdr(
    target: np.ndarray,
    interf: np.ndarray,
    loading: float = DEFAULT_LOADING,
    ref_channel: int = 0,
) -> np.ndarray:
    """
    MVDR filter ``R_i^-1 R_t e / tr(R_i^-1 R_t)``.

    :param target: Target covariance(s) (..., M, M).
    :type target: np.ndarray
    :param interf: Interference covariance(s) (..., M, M); loaded before
        inversion.
    :type interf: np.ndarray
    :param loading: Relative diagonal loading.
    :type loading: float
    :param ref_channel: Reference microphone.
    :type ref_channel: int
    :return: Filters (..., M).
    :rtype: np.ndarray
    :raises DegenerateTargetError: If a normalization trace is < 1e-12.
    """
    target = np.asarray(target, dtype=np.complex128)
    interf = np.asarray(interf, dtype=np.complex128)
    w, degenerate = _mvdr_filters(target, interf, loading, ref_channel)
    if np.any(degenerate):
        raise DegenerateTargetError(
            "MVDR normalization trace below 1e-12; target covariance is "
            "empty"
        )
    return w


def gev(
    target: np.ndarray,
    interf: np.ndarray,
    observation_cov: np.ndarray,
    loading: float = DEFAULT_LOADING,
    ref_channel: int = 0,
) -> np.ndarray:
    """
    Max-SNR filter rescaled for minimal distortion at the reference mic.

    The principal generalized eigenvector ``w`` of (R_t, R_i) is scaled by
    ``alpha = (w^H Phi e) / (w^H Phi w)`` with ``Phi`` the observation
    covariance, so ``(alpha w)^H x`` is the least-squares fit of ``x_ref``
    along ``w``.

    :param target: Target covariance(s) (..., M, M).
    :type target: np.ndarray
    :param interf: Interference covariance(s) (..., M, M).
    :type interf: np.ndarray
    :param observation_cov: Observation covariance(s) (..., M, M).
    :type observation_cov: np.ndarray
    :param loading: Relative loading of the interference covariance.
    :type loading: float
    :param ref_channel: Reference microphone.
    :type ref_channel: int
    :return: Filters (..., M).
    :rtype: np.ndarray
    """
    target = np.asarray(target, dtype=np.complex128)
    interf = np.asarray(interf, dtype=np.complex128)
    phi = np.asarray(observation_cov, dtype=np.complex128)
    w = gevd_principal(target, load(interf, loading))
    w_phi = np.einsum("...m,...mk->...k", np.conj(w), phi)
    num = w_phi[..., ref_channel]
    den = np.einsum("...k,...k->...", w_phi, w).real
    alpha = num / np.where(den > 0, den, 1.0)
    return alpha[..., None] * w


def mwf_matrices(
    covs: CovarianceSet, loading: float = DEFAULT_LOADING
) -> np.ndarray:
    """
    Time-invariant Wiener matrices ``R_n (sum_l R_l)^-1``.

    :param covs: Spatial covariances.
    :type covs: CovarianceSet
    :param loading: Relative loading of the summed covariance.
    :type loading: float
    :return: Array (F, N, M, M).
    :rtype: np.ndarray
    """
    inverse = herm_inverse(covs.total(), loading)
    return covs.matrices @ inverse[:, None]


def mwf_time_invariant(
    covs: CovarianceSet,
    n: int,
    loading: float = DEFAULT_LOADING,
    ref_channel: int = 0,
) -> np.ndarray:
    """
    Reference-channel filter of the time-invariant MWF for source ``n``.

    :param covs: Spatial covariances.
    :type covs: CovarianceSet
    :param n: Source index.
    :type n: int
    :param loading: Relative loading of the summed covariance.
    :type loading: float
    :param ref_channel: Reference microphone.
    :type ref_channel: int
    :return: Filters (F, M) with ``w^H x == (W x)[ref]``.
    :rtype: np.ndarray
    """
    matrices = mwf_matrices(covs, loading)[:, n]
    return np.conj(matrices[:, ref_channel, :])


def mwf_time_varying(
    covs: CovarianceSet,
    act: ActivationTensor | np.ndarray,
    loading: float = DEFAULT_LOADING,
) -> TimeVaryingFilter:
    """
    Time-varying MWF ``v_n R_n (sum_l v_l R_l)^-1``.

    :param covs: Spatial covariances (F, N, M, M).
    :type covs: CovarianceSet
    :param act: Activations (T, F, N).
    :type act: ActivationTensor | np.ndarray
    :param loading: Relative loading of the summed covariance.
    :type loading: float
    :return: Filter matrices (T, F, N, M, M).
    :rtype: TimeVaryingFilter
    """
    v = values_of(act).astype(np.float64)
    if v.ndim != 3 or v.shape[1:] != covs.matrices.shape[:2]:
        raise ShapeMismatchError(
            f"activations {v.shape} do not match covariances "
            f"{covs.matrices.shape[:2]}"
        )
    if np.any(v < 0):
        raise ValueError("activations must be >= 0")
    size = covs.n_channels
    eye = np.eye(size, dtype=np.complex128)
    varying = v[..., None, None] * covs.matrices[None]
    silent = v.sum(axis=-1) <= 0.0
    summed = varying.sum(axis=2)
    summed = np.where(silent[..., None, None], eye, summed)
    matrices = varying @ herm_inverse(summed, loading)[:, :, None]
    if np.any(silent):
        logger.warning(
            "all activations zero in %d (t, f) bins; using I/N",
            int(np.count_nonzero(silent)),
        )
        matrices = np.where(
            silent[..., None, None, None], eye / covs.n_sources, matrices
        )
    return TimeVaryingFilter(matrices=matrices, fallback=silent)


def build_bank(
    kind: str,
    covs: CovarianceSet,
    observation_cov: Optional[np.ndarray] = None,
    loading: float = DEFAULT_LOADING,
    ref_channel: int = 0,
) -> BeamformerBank:
    """
    Build filters for every (frequency, source).

    Pairs whose covariance is degenerate fall back to the reference
    selector ``e``.

    :param kind: ``"mvdr"``, ``"gev"`` or ``"mwf_ti"``.
    :type kind: str
    :param covs: Spatial covariances.
    :type covs: CovarianceSet
    :param observation_cov: Observation covariance (F, M, M) for GEV
        rescaling; defaults to the summed source covariances.
    :type observation_cov: np.ndarray | None
    :param loading: Relative diagonal loading.
    :type loading: float
    :param ref_channel: Reference microphone.
    :type ref_channel: int
    :return: The filter bank.
    :rtype: BeamformerBank
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    F, N, M = covs.matrices.shape[:3]
    filters = np.empty((F, N, M), dtype=np.complex128)
    fallback = np.array(covs.degenerate, dtype=bool, copy=True)
    if kind == "mwf_ti":
        matrices = mwf_matrices(covs, loading)
        filters[:] = np.conj(matrices[:, :, ref_channel, :])
    for n in range(N):
        target = covs.matrices[:, n]
        if kind == "mvdr":
            w, degenerate = _mvdr_filters(
                target, covs.interference(n), loading, ref_channel
            )
            filters[:, n] = w
            fallback[:, n] |= degenerate
        elif kind == "gev":
            phi = covs.total() if observation_cov is None else observation_cov
            filters[:, n] = gev(
                target, covs.interference(n), phi, loading, ref_channel
            )
    if np.any(fallback):
        logger.warning(
            "%s: %d (f, n) pairs fall back to the reference channel",
            kind,
            int(np.count_nonzero(fallback)),
        )
        filters[fallback] = np.eye(M, dtype=np.complex128)[ref_channel]
    return BeamformerBank(kind=kind, filters=filters, fallback=fallback)


def apply_bank(bank: BeamformerBank, x: ArrayLike) -> np.ndarray:
    """
    Apply time-invariant filters: ``c_hat[t, f, n] = w[f, n]^H x[t, f]``.

    :param bank: Filter bank (F, N, M).
    :type bank: BeamformerBank
    :param x: Observation (T, F, M).
    :return: Single-channel source estimates (T, F, N).
    :rtype: np.ndarray
    :raises ShapeMismatchError: If F or M disagree.
    """
    xv = values_of(x)
    if xv.ndim != 3 or xv.shape[1] != bank.filters.shape[0] or (
        xv.shape[2] != bank.filters.shape[2]
    ):
        raise ShapeMismatchError(
            f"observation {xv.shape} does not match bank "
            f"{bank.filters.shape}"
        )
    return np.einsum("fnm,tfm->tfn", np.conj(bank.filters), xv)


def apply_time_varying(
    filt: TimeVaryingFilter, x: ArrayLike, ref_channel: int = 0
) -> np.ndarray:
    """
    Reference-channel output of the time-varying MWF.

    :param filt: Filter matrices (T, F, N, M, M).
    :type filt: TimeVaryingFilter
    :param x: Observation (T, F, M).
    :param ref_channel: Reference microphone.
    :type ref_channel: int
    :return: Source estimates (T, F, N).
    :rtype: np.ndarray
    """
    xv = values_of(x)
    if xv.shape[:2] != filt.matrices.shape[:2] or (
        xv.shape[2] != filt.matrices.shape[-1]
    ):
        raise ShapeMismatchError(
            f"observation {xv.shape} does not match filter "
            f"{filt.matrices.shape}"
        )
    return np.einsum(
        "tfnk,tfk->tfn", filt.matrices[..., ref_channel, :], xv
    )
