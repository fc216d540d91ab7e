"""
Oracle masks, mask-weighted spatial covariances, oracle activations and the
estimator input feature.

Layout conventions: observations ``x`` are (T, F, M), per-source images
``c`` are (T, F, N, M), masks and activations are (T, F, N).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Union

import numpy as np
import torch

from mask_beamforming.errors import ShapeMismatchError
from mask_beamforming.hermitian import hermitize, identity_like
from mask_beamforming.transform import ComplexSpectrogram

logger = logging.getLogger(__name__)

# Guard for magnitude denominators and logarithms.
EPS = 1e-10
# Covariance returned for (f, n) pairs without mask mass.
COVARIANCE_FLOOR = 1e-10
# Mask mass below DEGENERATE_MASS * T counts as empty.
DEGENERATE_MASS = 1e-8

ArrayLike = Union[np.ndarray, ComplexSpectrogram]


def values_of(obj: Any) -> Any:
    """
    Underlying array of a spectrogram-like value.

    :param obj: ComplexSpectrogram, tensor wrapper or raw array.
    :return: The raw numpy array (or torch tensor, untouched).
    """
    if isinstance(obj, torch.Tensor):
        return obj
    if hasattr(obj, "values"):
        return np.asarray(obj.values)
    return np.asarray(obj)


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class MaskTensor:
    """
    Real TF masks in [0, 1].

    :ivar values: Array (T, F, N).
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ShapeMismatchError(
                f"mask must be (T, F, N), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("mask contains NaN or Inf")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError(
                f"mask values must lie in [0, 1], got range "
                f"[{values.min():.4g}, {values.max():.4g}]"
            )
        object.__setattr__(self, "values", _readonly(values))

    @property
    def n_sources(self) -> int:
        """Number of mask streams N."""
        return int(self.values.shape[-1])


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """
    Nonnegative time-varying source activations.

    :ivar values: Array (T, F, N).
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ShapeMismatchError(
                f"activation must be (T, F, N), got {values.shape}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("activations must be finite and >= 0")
        object.__setattr__(self, "values", _readonly(values))


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """
    Normalized log-magnitude input feature.

    :ivar values: Array (T, F).
    :ivar mean: Per-frequency utterance mean before normalization.
    :ivar std: Per-frequency utterance deviation; 0 where guarded.
    """

    values: np.ndarray
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """
    Per-frequency, per-source spatial covariance matrices.

    :ivar matrices: Complex array (F, N, M, M).
    :ivar mask_mass: Summed mask weight per (f, n).
    :ivar degenerate: True where the mass was too small and the floor
        ``COVARIANCE_FLOOR * I`` was returned.
    """

    matrices: np.ndarray
    mask_mass: np.ndarray
    degenerate: np.ndarray

    @property
    def n_sources(self) -> int:
        """Number of sources N."""
        return int(self.matrices.shape[1])

    @property
    def n_channels(self) -> int:
        """Number of channels M."""
        return int(self.matrices.shape[-1])

    def total(self) -> np.ndarray:
        """
        Sum over sources.

        :return: Array (F, M, M).
        :rtype: np.ndarray
        """
        return self.matrices.sum(axis=1)

    def interference(self, n: int) -> np.ndarray:
        """
        Covariance of everything but source ``n``.

        With a single source this is the floor ``COVARIANCE_FLOOR * I``.

        :param n: Target source index.
        :type n: int
        :return: Array (F, M, M).
        :rtype: np.ndarray
        """
        others = [l for l in range(self.n_sources) if l != n]
        if not others:
            eye = np.eye(self.n_channels, dtype=np.complex128)
            return np.broadcast_to(
                COVARIANCE_FLOOR * eye, self.matrices[:, 0].shape
            ).copy()
        return self.matrices[:, others].sum(axis=1)


def oracle_psm(x: ArrayLike, c: ArrayLike, ref_channel: int = 0) -> MaskTensor:
    """
    Oracle phase-sensitive mask against a reference microphone.

    :param x: Observation (T, F, M).
    :param c: Source images (T, F, N, M).
    :param ref_channel: Reference microphone index.
    :type ref_channel: int
    :return: ``clip(Re(c_ref conj(x_ref)) / max(|x_ref|^2, EPS), 0, 1)``.
    :rtype: MaskTensor
    :raises ShapeMismatchError: If shapes disagree or the channel is out
        of range.
    """
    xv = values_of(x)
    cv = values_of(c)
    if (
        cv.ndim != 4
        or cv.shape[:2] != xv.shape[:2]
        or cv.shape[3] != xv.shape[2]
    ):
        raise ShapeMismatchError(
            f"images {cv.shape} do not match observation {xv.shape}"
        )
    if not 0 <= ref_channel < xv.shape[-1]:
        raise ShapeMismatchError(
            f"ref_channel {ref_channel} out of range for M={xv.shape[-1]}"
        )
    x_ref = xv[..., ref_channel]
    power = (x_ref * np.conj(x_ref)).real
    cross = (cv[..., ref_channel] * np.conj(x_ref)[..., None]).real
    mask = cross / np.maximum(power, EPS)[..., None]
    return MaskTensor(np.clip(mask, 0.0, 1.0))


def weighted_covariance(mask: Any, x: Any, floor: float = COVARIANCE_FLOOR):
    """
    Mask-weighted spatial covariance, backend generic.

    ``R[f, n] = sum_t mask[t, f, n] x x^H / sum_t mask[t, f, n]``; pairs
    whose mass is below ``DEGENERATE_MASS * T`` get ``floor * I``.

    :param mask: Real masks (..., T, F, N), numpy or torch.
    :param x: Observation (..., T, F, M) of the same backend.
    :param floor: Diagonal value for degenerate pairs.
    :type floor: float
    :return: Tuple ``(R, mass, degenerate)`` with R of shape
        (..., F, N, M, M).
    """
    frames = mask.shape[-3]
    if isinstance(mask, torch.Tensor):
        weights = mask.to(x.dtype)
        num = torch.einsum(
            "...tfn,...tfm,...tfk->...fnmk", weights, x, x.conj()
        )
    else:
        num = np.einsum("...tfn,...tfm,...tfk->...fnmk", mask, x, np.conj(x))
    mass = mask.sum(-3)
    degenerate = mass < DEGENERATE_MASS * frames
    if isinstance(mask, torch.Tensor):
        safe = torch.where(degenerate, torch.ones_like(mass), mass)
        cov = hermitize(num / safe[..., None, None].to(num.dtype))
        fallback = floor * identity_like(cov)
        cov = torch.where(degenerate[..., None, None], fallback, cov)
    else:
        safe = np.where(degenerate, 1.0, mass)
        cov = hermitize(num / safe[..., None, None])
        fallback = floor * identity_like(cov)
        cov = np.where(degenerate[..., None, None], fallback, cov)
    return cov, mass, degenerate


def estimate_covariance(mask: Any, x: ArrayLike) -> CovarianceSet:
    """
    Mask-based spatial covariance estimation.

    :param mask: MaskTensor or array (T, F, N).
    :param x: Observation (T, F, M).
    :return: Covariances, mask mass and degenerate flags.
    :rtype: CovarianceSet
    :raises ShapeMismatchError: If T or F disagree.
    """
    mv = values_of(mask).astype(np.float64)
    xv = values_of(x).astype(np.complex128)
    if mv.ndim != 3 or xv.ndim != 3 or mv.shape[:2] != xv.shape[:2]:
        raise ShapeMismatchError(
            f"mask {mv.shape} and observation {xv.shape} disagree on (T, F)"
        )
    cov, mass, degenerate = weighted_covariance(mv, xv)
    if np.any(degenerate):
        logger.warning(
            "empty mask mass for %d (f, n) pairs; using %.0e * I",
            int(np.count_nonzero(degenerate)),
            COVARIANCE_FLOOR,
        )
    return CovarianceSet(matrices=cov, mask_mass=mass, degenerate=degenerate)


def observation_covariance(x: ArrayLike) -> np.ndarray:
    """
    Plain sample covariance ``(1/T) sum_t x x^H`` per frequency.

    :param x: Observation (T, F, M).
    :return: Array (F, M, M).
    :rtype: np.ndarray
    """
    xv = values_of(x).astype(np.complex128)
    return hermitize(
        np.einsum("tfm,tfk->fmk", xv, np.conj(xv)) / xv.shape[0]
    )


def oracle_activation(c: ArrayLike) -> ActivationTensor:
    """
    Oracle activation: per-channel power relative to its utterance mean,
    averaged over channels.

    :param c: Source images (T, F, N, M).
    :return: Activations (T, F, N).
    :rtype: ActivationTensor
    """
    cv = values_of(c)
    if cv.ndim != 4:
        raise ShapeMismatchError(
            f"images must be (T, F, N, M), got {cv.shape}"
        )
    power = (cv * np.conj(cv)).real
    mean = power.mean(axis=0, keepdims=True)
    return ActivationTensor((power / np.maximum(mean, EPS)).mean(axis=-1))


def input_feature(x: ArrayLike) -> FeatureTensor:
    """
    Log mean-magnitude feature with per-frequency utterance normalization.

    Frequencies with zero variance map to 0.

    :param x: Observation (T, F, M) with T >= 2.
    :return: Normalized feature (T, F).
    :rtype: FeatureTensor
    """
    xv = values_of(x)
    if xv.ndim != 3 or xv.shape[0] < 2:
        raise ShapeMismatchError(
            f"input_feature needs (T, F, M) with T >= 2, got {xv.shape}"
        )
    log_amp = np.log(np.abs(xv).mean(axis=-1) + EPS)
    mean = log_amp.mean(axis=0)
    std = log_amp.std(axis=0)
    live = std > 1e-8
    values = np.where(
        live, (log_amp - mean) / np.where(live, std, 1.0), 0.0
    )
    return FeatureTensor(
        values=values, mean=mean, std=np.where(live, std, 0.0)
    )
