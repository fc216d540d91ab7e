"""
Training losses for mask estimation.

- ``psa``: phase-sensitive approximation on the reference channel.
- ``l1``: multichannel posterior loss through the time-varying MWF; needs
  estimated activations and the clean source images.
- ``l2``: multichannel Itakura-Saito loss between ``x x^H`` and
  ``sum_n v*_n R_n``; needs oracle activations only.

The per-bin terms are computed in torch (float64 / complex128) with any
number of leading batch axes, so gradients come from autograd and
permutations or finite-difference perturbations can be evaluated in one call.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
import torch

from mask_beamforming.errors import (
    NonFiniteGradientError,
    ShapeMismatchError,
)
from mask_beamforming.hermitian import (
    DEFAULT_LOADING,
    herm_inverse,
    hermitize,
    load,
    logdet,
)
from mask_beamforming.masks import (
    oracle_activation,
    values_of,
    weighted_covariance,
)

logger = logging.getLogger(__name__)

LOSS_NAMES = ("psa", "l1", "l2")
MAX_PIT_SOURCES = 4
MAX_GRAD_CHECK_PARAMETERS = 200


@dataclass(frozen=True, eq=False)
class LossValue:
    """
    Scalar loss and its per-bin contributions.

    :ivar total: Sum of ``per_bin``.
    :ivar per_bin: (T, F, N) for psa/l1, (T, F) for l2.
    """

    total: float
    per_bin: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class LossGradient:
    """
    Gradient of a loss total.

    :ivar d_mask: Derivative w.r.t. the masks (T, F, N).
    :ivar d_activation: Derivative w.r.t. the activations (l1 only).
    """

    d_mask: np.ndarray
    d_activation: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Permutation:
    """
    Assignment of output streams to references.

    :ivar mapping: ``mapping[i]`` is the reference index matched to output
        stream ``i``.
    """

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"mapping {mapping} is not a bijection")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        """Identity assignment over ``n`` streams."""
        return cls(tuple(range(n)))

    def inverse(self) -> "Permutation":
        """The permutation mapping references back to outputs."""
        inverse = [0] * len(self.mapping)
        for output, reference in enumerate(self.mapping):
            inverse[reference] = output
        return Permutation(tuple(inverse))


@dataclass(frozen=True, eq=False)
class LossInputs:
    """
    Everything a loss may need for one utterance or chunk.

    :ivar mask: Masks (T, F, N).
    :ivar x: Observation (T, F, M).
    :ivar c: Clean source images (T, F, N, M).
    :ivar activation: Estimated activations (T, F, N), for l1.
    :ivar act_star: Oracle activations (T, F, N), for l2.
    :ivar ref_channel: Reference microphone, for psa.
    :ivar seed: Seed the instance was drawn with, if random.
    """

    mask: np.ndarray
    x: np.ndarray
    c: np.ndarray
    activation: Optional[np.ndarray] = None
    act_star: Optional[np.ndarray] = None
    ref_channel: int = 0
    seed: Optional[int] = None

    @classmethod
    def random(
        cls,
        seed: int,
        n_frames: int = 4,
        n_freq: int = 3,
        n_channels: int = 2,
        n_sources: int = 2,
    ) -> "LossInputs":
        """
        Draw a small random instance.

        :param seed: Seed for ``numpy.random.default_rng``.
        :type seed: int
        :param n_frames: T.
        :type n_frames: int
        :param n_freq: F.
        :type n_freq: int
        :param n_channels: M.
        :type n_channels: int
        :param n_sources: N.
        :type n_sources: int
        :return: Instance with ``x = sum_n c_n``.
        :rtype: LossInputs
        """
        rng = np.random.default_rng(seed)
        shape = (n_frames, n_freq, n_sources, n_channels)
        c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        x = c.sum(axis=2)
        streams = (n_frames, n_freq, n_sources)
        return cls(
            mask=rng.uniform(0.05, 0.95, streams),
            x=x,
            c=c,
            activation=rng.uniform(0.2, 2.0, streams),
            act_star=oracle_activation(c).values,
            seed=seed,
        )

    def references(self, loss: str) -> np.ndarray:
        """
        Reference streams PIT permutes for ``loss``.

        :param loss: Loss identifier.
        :type loss: str
        :return: c_ref (T, F, N) for psa, c (T, F, N, M) for l1, v* for l2.
        :rtype: np.ndarray
        """
        if loss == "psa":
            return values_of(self.c)[..., self.ref_channel]
        if loss == "l1":
            return values_of(self.c)
        if loss == "l2":
            if self.act_star is None:
                return oracle_activation(self.c).values
            return values_of(self.act_star)
        raise ValueError(f"unknown loss {loss!r}; expected {LOSS_NAMES}")


def _real(a: Any) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a.to(torch.float64)
    return torch.as_tensor(
        np.ascontiguousarray(values_of(a)), dtype=torch.float64
    )


def _complex(a: Any) -> torch.Tensor:
    if isinstance(a, torch.Tensor):
        return a.to(torch.complex128)
    return torch.as_tensor(
        np.ascontiguousarray(values_of(a)), dtype=torch.complex128
    )


def _check_streams(mask: Any, *others: Any) -> None:
    shape = tuple(mask.shape[-3:])
    for other in others:
        if other is not None and tuple(other.shape[-3:]) != shape:
            raise ShapeMismatchError(
                f"stream shape {tuple(other.shape)} does not match mask "
                f"{shape}"
            )


def psa_terms(mask: Any, x_ref: Any, c_ref: Any) -> torch.Tensor:
    """
    Per-bin PSA terms ``|mask x_ref - c_ref|^2 / (T F)``.

    :param mask: Masks (..., T, F, N).
    :param x_ref: Reference-channel observation (..., T, F).
    :param c_ref: Reference-channel sources (..., T, F, N).
    :return: Tensor (..., T, F, N).
    """
    mask, x_ref, c_ref = _real(mask), _complex(x_ref), _complex(c_ref)
    frames, freqs = mask.shape[-3], mask.shape[-2]
    residual = mask * x_ref[..., None] - c_ref
    return (residual.abs() ** 2) / (frames * freqs)


def posterior_terms(
    varying: Any, x: Any, c: Any, loading: float = DEFAULT_LOADING
) -> torch.Tensor:
    """
    Posterior terms for given time-varying source covariances.

    :param varying: ``v R`` per source (..., T, F, N, M, M).
    :param x: Observation (..., T, F, M).
    :param c: Source images (..., T, F, N, M).
    :param loading: Relative loading of the summed covariance and ``Psi``.
    :return: Tensor (..., T, F, N).
    """
    varying, x, c = _complex(varying), _complex(x), _complex(c)
    inv_total = herm_inverse(varying.sum(-3), loading).unsqueeze(-3)
    wiener = varying @ inv_total
    c_hat = (wiener @ x[..., None, :, None]).squeeze(-1)
    d = c - c_hat
    psi = load(hermitize(varying - wiener @ varying), loading)
    quad = torch.einsum(
        "...m,...mk,...k->...", d.conj(), herm_inverse(psi), d
    ).real
    return quad + logdet(psi)


def l1_terms(
    mask: Any,
    act_hat: Any,
    x: Any,
    c: Any,
    loading: float = DEFAULT_LOADING,
) -> torch.Tensor:
    """
    Per-(t, f, n) posterior terms ``d^H Psi^-1 d + log det Psi``.

    ``Psi`` is formed as ``R - R S^-1 R`` (Hermitian by construction) with
    ``R = v R_hat`` and ``S = sum_n R``, then loaded.

    :param mask: Masks (..., T, F, N).
    :param act_hat: Activations (..., T, F, N).
    :param x: Observation (..., T, F, M).
    :param c: Source images (..., T, F, N, M).
    :param loading: Relative loading of ``S`` and ``Psi``.
    :return: Tensor (..., T, F, N).
    """
    mask, act_hat = _real(mask), _real(act_hat)
    x = _complex(x)
    cov, _, _ = weighted_covariance(mask, x)
    varying = act_hat.to(cov.dtype)[..., None, None] * cov.unsqueeze(-5)
    return posterior_terms(varying, x, c, loading)


def l2_terms(
    mask: Any, act_star: Any, x: Any, loading: float = DEFAULT_LOADING
) -> torch.Tensor:
    """
    Per-(t, f) terms ``tr(X X_hat^-1) + log det X_hat``.

    :param mask: Masks (..., T, F, N).
    :param act_star: Oracle activations (..., T, F, N).
    :param x: Observation (..., T, F, M).
    :param loading: Relative loading of ``X_hat``.
    :return: Tensor (..., T, F).
    """
    mask, act_star, x = _real(mask), _real(act_star), _complex(x)
    cov, _, _ = weighted_covariance(mask, x)
    model = torch.einsum(
        "...tfn,...fnmk->...tfmk", act_star.to(cov.dtype), cov
    )
    model = load(model, loading)
    quad = torch.einsum(
        "...m,...mk,...k->...", x.conj(), herm_inverse(model), x
    ).real
    return quad + logdet(model)


def _to_value(per_bin: torch.Tensor) -> LossValue:
    detached = per_bin.detach()
    total = float(detached.sum())
    if not np.isfinite(total):
        raise FloatingPointError(f"loss total is not finite ({total})")
    return LossValue(total=total, per_bin=detached.numpy())


def loss_psa(mask: Any, x_ref: Any, c_ref: Any) -> LossValue:
    """
    Phase-sensitive approximation loss.

    :param mask: Masks (T, F, N).
    :param x_ref: Reference-channel observation (T, F).
    :param c_ref: Reference-channel sources (T, F, N).
    :return: ``(1/TF) sum |mask x - c|^2`` over bins and sources.
    :rtype: LossValue
    """
    _check_streams(mask, c_ref)
    return _to_value(psa_terms(mask, x_ref, c_ref))


def loss_l1(
    mask: Any,
    act_hat: Any,
    x: Any,
    c: Any,
    loading: float = DEFAULT_LOADING,
) -> LossValue:
    """
    Multichannel posterior loss through the time-varying MWF.

    :param mask: Masks (T, F, N).
    :param act_hat: Estimated activations (T, F, N).
    :param x: Observation (T, F, M).
    :param c: Source images (T, F, N, M).
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Summed loss and (T, F, N) terms.
    :rtype: LossValue
    """
    _check_streams(mask, act_hat)
    if values_of(c).ndim != 4:
        raise ShapeMismatchError("c must be (T, F, N, M)")
    return _to_value(l1_terms(mask, act_hat, x, c, loading))


def loss_l2(
    mask: Any, act_star: Any, x: Any, loading: float = DEFAULT_LOADING
) -> LossValue:
    """
    Multichannel Itakura-Saito loss against the observation.

    :param mask: Masks (T, F, N).
    :param act_star: Oracle activations (T, F, N).
    :param x: Observation (T, F, M).
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Summed loss and (T, F) terms.
    :rtype: LossValue
    """
    _check_streams(mask, act_star)
    return _to_value(l2_terms(mask, act_star, x, loading))


def loss_terms(
    loss: str,
    mask: Any,
    x: Any,
    references: Any,
    activation: Any = None,
    ref_channel: int = 0,
    loading: float = DEFAULT_LOADING,
) -> torch.Tensor:
    """
    Per-bin terms of ``loss`` given output streams and references.

    :param loss: ``"psa"``, ``"l1"``, ``"l2"`` or ``"quadratic"``.
    :type loss: str
    :param mask: Masks (..., T, F, N).
    :param x: Observation (..., T, F, M).
    :param references: See :meth:`LossInputs.references`.
    :param activation: Estimated activations (l1).
    :param ref_channel: Reference microphone (psa).
    :type ref_channel: int
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Per-bin tensor.
    """
    if loss == "quadratic":
        return _real(mask) ** 2
    if loss == "psa":
        return psa_terms(mask, _complex(x)[..., ref_channel], references)
    if loss == "l1":
        if activation is None:
            raise ValueError("loss l1 requires activations")
        return l1_terms(mask, activation, x, references, loading)
    if loss == "l2":
        return l2_terms(mask, references, x, loading)
    raise ValueError(f"unknown loss {loss!r}; expected {LOSS_NAMES}")


def _stream_dims(loss: str) -> int:
    return 2 if loss == "l2" else 3


def loss_gradient(
    loss: str, inputs: LossInputs, loading: float = DEFAULT_LOADING
) -> tuple[LossValue, LossGradient]:
    """
    Loss value and autograd gradients w.r.t. masks (and activations for l1).

    :param loss: ``"psa"``, ``"l1"``, ``"l2"`` or ``"quadratic"``.
    :type loss: str
    :param inputs: Loss inputs.
    :type inputs: LossInputs
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Value and gradient.
    :rtype: tuple[LossValue, LossGradient]
    """
    mask = _real(inputs.mask).clone().requires_grad_(True)
    activation = None
    if loss == "l1":
        activation = _real(inputs.activation).clone().requires_grad_(True)
    references = (
        None if loss == "quadratic" else inputs.references(loss)
    )
    per_bin = loss_terms(
        loss,
        mask,
        inputs.x,
        references,
        activation,
        inputs.ref_channel,
        loading,
    )
    per_bin.sum().backward()
    gradient = LossGradient(
        d_mask=mask.grad.numpy(),
        d_activation=None if activation is None else activation.grad.numpy(),
    )
    return _to_value(per_bin), gradient


def _central_differences(
    totals: Callable[[torch.Tensor], torch.Tensor],
    base: torch.Tensor,
    step: float,
) -> np.ndarray:
    count = base.numel()
    basis = torch.eye(count, dtype=base.dtype).reshape(count, *base.shape)
    batch = torch.cat([base + step * basis, base - step * basis])
    with torch.no_grad():
        values = totals(batch)
    return ((values[:count] - values[count:]) / (2 * step)).reshape(
        base.shape
    ).numpy()


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Largest elementwise ``|a - n| / max(|a|, |n|, 1e-3 max|n|)``.

    :param analytic: Gradient under test.
    :type analytic: np.ndarray
    :param numeric: Finite-difference reference.
    :type numeric: np.ndarray
    :return: Maximum relative deviation.
    :rtype: float
    """
    scale = 1e-3 * float(np.max(np.abs(numeric)))
    denominator = np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), max(scale, 1e-30)
    )
    return float(np.max(np.abs(analytic - numeric) / denominator))


@dataclass(frozen=True)
class GradCheckReport:
    """
    Outcome of a finite-difference gradient check.

    :ivar loss: Loss identifier.
    :ivar seed: Seed of the instance, if known.
    :ivar n_parameters: Number of perturbed inputs.
    :ivar max_rel_error: Largest relative deviation.
    :ivar rel_tol: Tolerance applied.
    """

    loss: str
    seed: Optional[int]
    n_parameters: int
    max_rel_error: float
    rel_tol: float

    @property
    def passed(self) -> bool:
        """True when the deviation is within tolerance."""
        return self.max_rel_error < self.rel_tol

    def to_text(self) -> str:
        """
        One-line plain-text report.

        :return: ``loss=... seed=... params=... max_rel_err=... PASS|FAIL``
        :rtype: str
        """
        return (
            f"loss={self.loss} seed={self.seed} params={self.n_parameters} "
            f"max_rel_err={self.max_rel_error:.3e} "
            f"{'PASS' if self.passed else 'FAIL'}"
        )


def grad_check(
    loss: str,
    inputs: LossInputs,
    rel_tol: float = 1e-4,
    step: float = 1e-5,
    loading: float = DEFAULT_LOADING,
) -> GradCheckReport:
    """
    Compare autograd gradients with central finite differences.

    :param loss: ``"psa"``, ``"l1"``, ``"l2"`` or ``"quadratic"``.
    :type loss: str
    :param inputs: A small instance (T*F*N <= 200).
    :type inputs: LossInputs
    :param rel_tol: Pass threshold on the max relative error.
    :type rel_tol: float
    :param step: Finite-difference step.
    :type step: float
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: The report.
    :rtype: GradCheckReport
    :raises NonFiniteGradientError: If any gradient is NaN or Inf.
    """
    mask = _real(inputs.mask)
    if mask.numel() > MAX_GRAD_CHECK_PARAMETERS:
        raise ValueError(
            f"grad_check is limited to {MAX_GRAD_CHECK_PARAMETERS} mask "
            f"values, got {mask.numel()}"
        )
    _, gradient = loss_gradient(loss, inputs, loading)
    references = None if loss == "quadratic" else inputs.references(loss)
    activation = None if loss != "l1" else _real(inputs.activation)
    reduce_dims = tuple(range(-_stream_dims(loss), 0))

    def by_mask(batch: torch.Tensor) -> torch.Tensor:
        return loss_terms(
            loss,
            batch,
            inputs.x,
            references,
            activation,
            inputs.ref_channel,
            loading,
        ).sum(reduce_dims)

    pairs = [(gradient.d_mask, _central_differences(by_mask, mask, step))]
    if activation is not None:

        def by_activation(batch: torch.Tensor) -> torch.Tensor:
            return loss_terms(
                loss, mask, inputs.x, references, batch, loading=loading
            ).sum(reduce_dims)

        pairs.append(
            (
                gradient.d_activation,
                _central_differences(by_activation, activation, step),
            )
        )
    errors = []
    for analytic, numeric in pairs:
        finite = np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))
        if not finite:
            raise NonFiniteGradientError(
                f"non-finite gradient for loss {loss!r}"
            )
        errors.append(relative_error(analytic, numeric))
    report = GradCheckReport(
        loss=loss,
        seed=inputs.seed,
        n_parameters=sum(a.size for a, _ in pairs),
        max_rel_error=max(errors),
        rel_tol=rel_tol,
    )
    logger.debug(report.to_text())
    return report


def _permuted(references: Any, mapping: tuple[int, ...], loss: str) -> Any:
    axis = -2 if loss == "l1" else -1
    index = list(mapping)
    if isinstance(references, torch.Tensor):
        return references.index_select(axis, torch.as_tensor(index))
    return np.take(references, index, axis=axis)


def permutations(n: int) -> list[Permutation]:
    """
    All assignments of ``n`` streams in lexicographic order.

    :param n: Number of sources (<= 4).
    :type n: int
    :return: ``n!`` permutations, identity first.
    :rtype: list[Permutation]
    """
    if n > MAX_PIT_SOURCES:
        raise ValueError(
            f"PIT enumerates N! assignments and supports N <= "
            f"{MAX_PIT_SOURCES}, got {n}"
        )
    return [Permutation(p) for p in itertools.permutations(range(n))]


def pit_wrap(
    loss: str, inputs: LossInputs, loading: float = DEFAULT_LOADING
) -> tuple[LossValue, Permutation]:
    """
    Minimum of ``loss`` over all output-to-reference assignments.

    Masks (and activations for l1) are the output streams; references are
    the clean images (psa, l1) or the oracle activations (l2). Ties keep
    the first permutation in lexicographic order.

    :param loss: ``"psa"``, ``"l1"`` or ``"l2"``.
    :type loss: str
    :param inputs: Loss inputs.
    :type inputs: LossInputs
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Best loss and its permutation.
    :rtype: tuple[LossValue, Permutation]
    """
    references = inputs.references(loss)
    n = values_of(inputs.mask).shape[-1]
    best: Optional[tuple[LossValue, Permutation]] = None
    for perm in permutations(n):
        ordered = _permuted(references, perm.mapping, loss)
        if loss == "psa":
            x_ref = values_of(inputs.x)[..., inputs.ref_channel]
            value = loss_psa(inputs.mask, x_ref, ordered)
        elif loss == "l1":
            value = loss_l1(
                inputs.mask, inputs.activation, inputs.x, ordered, loading
            )
        else:
            value = loss_l2(inputs.mask, ordered, inputs.x, loading)
        if best is None or value.total < best[0].total:
            best = (value, perm)
    assert best is not None
    return best


def pit_totals(
    loss: str,
    mask: torch.Tensor,
    x: Any,
    references: Any,
    activation: Optional[torch.Tensor] = None,
    ref_channel: int = 0,
    loading: float = DEFAULT_LOADING,
) -> tuple[torch.Tensor, list[Permutation]]:
    """
    Differentiable loss totals for every permutation, in one batch.

    :param loss: ``"psa"``, ``"l1"`` or ``"l2"``.
    :type loss: str
    :param mask: Masks (T, F, N), typically requiring grad.
    :type mask: torch.Tensor
    :param x: Observation (T, F, M).
    :param references: See :meth:`LossInputs.references`.
    :param activation: Activations for l1.
    :type activation: torch.Tensor | None
    :param ref_channel: Reference microphone (psa).
    :type ref_channel: int
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Totals of shape (N!,) and the matching permutations.
    :rtype: tuple[torch.Tensor, list[Permutation]]
    """
    perms = permutations(int(mask.shape[-1]))
    refs = _complex(references) if loss != "l2" else _real(references)
    stacked = torch.stack([_permuted(refs, p.mapping, loss) for p in perms])
    terms = loss_terms(
        loss, mask, x, stacked, activation, ref_channel, loading
    )
    reduce_dims = tuple(range(-_stream_dims(loss), 0))
    return terms.sum(reduce_dims), perms
