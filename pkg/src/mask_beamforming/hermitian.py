"""
Small dense Hermitian matrix algebra.

Matrices live in the last two axes; any leading axes are batch axes.
``hermitize``, ``trace``, ``load``, ``herm_inverse``, ``logdet`` and
``sample_outer`` accept numpy arrays or torch tensors and return the same
kind, so the losses can differentiate through them.
"""

from __future__ import annotations

from typing import Any

import numpy as np
import scipy.linalg
import torch

from mask_beamforming.errors import (
    NotPositiveDefiniteError,
    ShapeMismatchError,
    SingularMatrixError,
)

# Absolute floor inside the loading term.
EPS0 = 1e-12
# Default relative loading for covariances estimated from masks.
DEFAULT_LOADING = 1e-6


def _is_torch(a: Any) -> bool:
    return isinstance(a, torch.Tensor)


def _check_square(a: Any) -> None:
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] < 1:
        raise ShapeMismatchError(
            f"expected (..., M, M) matrices, got shape {tuple(a.shape)}"
        )


def conj_transpose(a: Any) -> Any:
    """Hermitian transpose over the last two axes."""
    return a.conj().swapaxes(-1, -2)


def hermitize(a: Any) -> Any:
    """
    Symmetrize roundoff: ``(A + A^H) / 2``.

    :param a: Batch of square matrices.
    :return: Hermitian part of ``a``.
    """
    return 0.5 * (a + conj_transpose(a))


def trace(a: Any) -> Any:
    """Batched trace over the last two axes."""
    return a.diagonal(0, -2, -1).sum(-1)


def identity_like(a: Any) -> Any:
    """Identity of the matrix size of ``a`` in its dtype and backend."""
    size = a.shape[-1]
    if _is_torch(a):
        return torch.eye(size, dtype=a.dtype, device=a.device)
    return np.eye(size, dtype=a.dtype)


def load(a: Any, loading: float = DEFAULT_LOADING) -> Any:
    """
    Diagonal loading ``A + loading * (tr(A)/M + EPS0) * I``.

    :param a: Batch of Hermitian matrices.
    :param loading: Relative loading (>= 0).
    :type loading: float
    :return: Loaded matrices; ``a`` itself when ``loading == 0``.
    """
    if loading == 0:
        return a
    size = a.shape[-1]
    scale = loading * (trace(a).real / size + EPS0)
    if not _is_torch(scale):
        scale = np.asarray(scale)
    return a + scale[..., None, None] * identity_like(a)


def herm_inverse(a: Any, loading: float = 0.0) -> Any:
    """
    Inverse of the loaded matrix, re-Hermitized.

    :param a: Batch of Hermitian matrices (..., M, M).
    :param loading: Relative loading applied before inversion.
    :type loading: float
    :return: ``(A + loading*(tr(A)/M + EPS0)*I)^-1``.
    :raises SingularMatrixError: If ``loading == 0`` and a matrix is
        singular to machine precision.
    """
    _check_square(a)
    loaded = load(a, loading)
    if _is_torch(loaded):
        return hermitize(torch.linalg.inv(loaded))
    if loading == 0:
        cond = np.linalg.cond(loaded)
        if np.any(~np.isfinite(cond)) or np.any(
            cond * np.finfo(np.float64).eps >= 1.0
        ):
            raise SingularMatrixError(
                "matrix is singular to machine precision; use loading > 0"
            )
    try:
        return hermitize(np.linalg.inv(loaded))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc


def logdet(a: Any) -> Any:
    """
    Log-determinant through a Cholesky factorization.

    :param a: Batch of Hermitian positive definite matrices.
    :return: ``sum(log(eig(A)))`` per matrix (real).
    :raises NotPositiveDefiniteError: If a matrix is not PD.
    """
    _check_square(a)
    if _is_torch(a):
        chol, info = torch.linalg.cholesky_ex(a)
        if bool(torch.any(info != 0)):
            raise NotPositiveDefiniteError(
                "logdet requires positive definite matrices"
            )
        return 2.0 * torch.log(chol.diagonal(0, -2, -1).real).sum(-1)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"logdet requires positive definite matrices: {exc}"
        ) from exc
    return 2.0 * np.log(chol.diagonal(0, -2, -1).real).sum(-1)


def sample_outer(x: Any) -> Any:
    """
    Rank-one ``x x^H`` for a batch of vectors (..., M).

    :param x: Complex vectors.
    :return: Matrices (..., M, M).
    """
    if _is_torch(x):
        return torch.einsum("...m,...k->...mk", x, x.conj())
    return np.einsum("...m,...k->...mk", x, np.conj(x))


def rayleigh_quotient(w: np.ndarray, a: np.ndarray, b: np.ndarray):
    """
    Generalized Rayleigh quotient ``w^H A w / w^H B w``.

    :param w: Vectors (..., M).
    :type w: np.ndarray
    :param a: Numerator matrices (..., M, M).
    :type a: np.ndarray
    :param b: Denominator matrices (..., M, M).
    :type b: np.ndarray
    :return: Real quotients (...).
    """
    num = np.einsum("...m,...mk,...k->...", np.conj(w), a, w).real
    den = np.einsum("...m,...mk,...k->...", np.conj(w), b, w).real
    return num / den


def gevd_principal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Principal generalized eigenvector of the pencil (A, B).

    :param a: Hermitian matrices (..., M, M).
    :type a: np.ndarray
    :param b: Hermitian positive definite matrices (..., M, M).
    :type b: np.ndarray
    :return: Unit-norm vectors (..., M) maximizing ``w^H A w / w^H B w``.
    :rtype: np.ndarray
    :raises NotPositiveDefiniteError: If a ``B`` is not PD.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    _check_square(a)
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"pencil shapes differ: {a.shape} vs {b.shape}"
        )
    size = a.shape[-1]
    flat_a = hermitize(a).reshape(-1, size, size)
    flat_b = hermitize(b).reshape(-1, size, size)
    out = np.empty((flat_a.shape[0], size), dtype=np.complex128)
    for k in range(flat_a.shape[0]):
        try:
            _, vectors = scipy.linalg.eigh(
                flat_a[k], flat_b[k], subset_by_index=[size - 1, size - 1]
            )
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(
                f"generalized eigenproblem failed for matrix {k}: B must "
                "be positive definite"
            ) from exc
        vector = vectors[:, 0]
        out[k] = vector / np.linalg.norm(vector)
    return out.reshape(a.shape[:-1])
