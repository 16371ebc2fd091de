"""Stabilized kernels for symmetric and SPD 3x3 matrices.

Every function accepts a single ``(3, 3)`` matrix or a stack ``(..., 3, 3)``
and broadcasts over the leading axes. Nothing here keeps state.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

EPS_PD = 1e-8
"""Eigenvalue floor for covariance matrices."""

_ILL_CONDITIONED = 1e8


class InvalidInputError(ValueError):
    """Raised for non-finite or wrongly shaped matrix input."""


class ConditioningWarning(UserWarning):
    """Result computed, but conditioning degrades its precision."""


class EigenSystem3(NamedTuple):
    eigenvalues: np.ndarray  # (..., 3) ascending
    eigenvectors: np.ndarray  # (..., 3, 3) columns match eigenvalues


def _as_mat3(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape[-2:] != (3, 3):
        raise InvalidInputError(f"{name}: expected trailing shape (3, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name}: non-finite entry")
    return a


def transpose(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


def symmetrize(m) -> np.ndarray:
    """Return ``(m + m^T) / 2``; exact for already symmetric input."""
    a = _as_mat3(m)
    return 0.5 * (a + transpose(a))


def is_symmetric(m, atol: float = 0.0) -> bool:
    a = np.asarray(m, dtype=float)
    return bool(np.all(np.abs(a - transpose(a)) <= atol))


def eigh3(s) -> EigenSystem3:
    """Symmetric eigendecomposition with a deterministic eigenvector sign.

    Eigenvalues come back ascending. Each eigenvector is flipped so that its
    largest-magnitude component is nonnegative (first such index on ties).
    """
    a = _as_mat3(s)
    lam, q = np.linalg.eigh(a)
    idx = np.argmax(np.abs(q), axis=-2)[..., None, :]
    lead = np.take_along_axis(q, idx, axis=-2)
    q = np.where(lead < 0.0, -q, q)
    return EigenSystem3(lam, q)


def clamp_eigenvalues(e: EigenSystem3, floor: float = EPS_PD) -> EigenSystem3:
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    return EigenSystem3(np.maximum(e.eigenvalues, floor), e.eigenvectors)


def reconstruct(e: EigenSystem3, fn=None) -> np.ndarray:
    """Assemble ``Q f(L) Q^T`` (symmetrized) from an eigensystem."""
    lam = e.eigenvalues if fn is None else fn(e.eigenvalues)
    q = e.eigenvectors
    out = (q * lam[..., None, :]) @ transpose(q)
    return 0.5 * (out + transpose(out))


def is_spd(m, eps: float = EPS_PD) -> bool:
    """True when ``m`` is symmetric with every eigenvalue at or above ``eps``.

    The floor is tested with a round-off allowance proportional to the
    largest eigenvalue, so reconstructed clamped matrices still qualify.
    """
    a = np.asarray(m, dtype=float)
    if a.shape[-2:] != (3, 3) or not np.all(np.isfinite(a)):
        return False
    if not is_symmetric(a):
        return False
    lam = np.linalg.eigvalsh(a)
    slack = 64 * np.finfo(float).eps * np.max(np.abs(lam), axis=-1, keepdims=True)
    return bool(np.all(lam >= eps - slack))


def project_spd(m, eps: float = EPS_PD) -> np.ndarray:
    """Symmetrize and clamp eigenvalues to ``eps``.

    Matrices that already satisfy :func:`is_spd` are returned symmetrized
    but otherwise untouched, which makes the projection idempotent.
    """
    a = symmetrize(m)
    e = eigh3(a)
    lam = e.eigenvalues
    slack = 64 * np.finfo(float).eps * np.max(np.abs(lam), axis=-1, keepdims=True)
    bad = np.any(lam < eps - slack, axis=-1)
    if not np.any(bad):
        return a
    fixed = reconstruct(clamp_eigenvalues(e, eps))
    return np.where(bad[..., None, None], fixed, a)


def sqrt_spd(a, eps: float = EPS_PD) -> np.ndarray:
    """Principal square root through the clamped eigendecomposition."""
    return reconstruct(clamp_eigenvalues(eigh3(a), eps), np.sqrt)


def inv_sqrt_spd(a, eps: float = EPS_PD) -> np.ndarray:
    """Inverse principal square root ``a^{-1/2}``.

    Emits :class:`ConditioningWarning` when the clamped condition number
    exceeds 1e8.
    """
    e = clamp_eigenvalues(eigh3(a), eps)
    check_conditioning(e)
    return reconstruct(e, lambda lam: 1.0 / np.sqrt(lam))


def check_conditioning(e: EigenSystem3, limit: float = _ILL_CONDITIONED) -> None:
    """Warn with :class:`ConditioningWarning` if any condition number exceeds ``limit``."""
    cond = e.eigenvalues[..., -1] / e.eigenvalues[..., 0]
    if np.any(cond > limit):
        warnings.warn(
            f"condition number {float(np.max(cond)):.3g} exceeds {limit:.0e}; precision degraded",
            ConditioningWarning,
            stacklevel=3,
        )


def solve_sylvester(sigma, delta, eps: float = EPS_PD) -> np.ndarray:
    """Solve ``G sigma + sigma G = delta`` for SPD ``sigma``.

    Works in the eigenbasis of ``sigma``: with ``sigma = Q L Q^T`` the
    rotated right-hand side ``Q^T delta Q`` is divided entrywise by
    ``l_i + l_j``. Symmetric ``delta`` gives a symmetric solution.
    """
    e = clamp_eigenvalues(eigh3(sigma), eps)
    d = _as_mat3(delta, "delta")
    q, lam = e.eigenvectors, e.eigenvalues
    rotated = transpose(q) @ d @ q
    g = q @ (rotated / (lam[..., :, None] + lam[..., None, :])) @ transpose(q)
    sym = np.all(d == transpose(d), axis=(-2, -1))
    return np.where(sym[..., None, None], 0.5 * (g + transpose(g)), g)


def solve_sylvester_kron(sigma, delta) -> np.ndarray:
    """Reference solve of ``G sigma + sigma G = delta`` by 9x9 vectorization.

    Slow and unstabilized; kept as an independent check on
    :func:`solve_sylvester`.
    """
    s = _as_mat3(sigma, "sigma")
    d = _as_mat3(delta, "delta")
    eye = np.eye(3)
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    k = np.einsum("...ij,kl->...ikjl", s, eye).reshape(s.shape[:-2] + (9, 9))
    k = k + np.einsum("ij,...kl->...ikjl", eye, transpose(s)).reshape(s.shape[:-2] + (9, 9))
    vec = np.linalg.solve(k, d.reshape(d.shape[:-2] + (9,))[..., None])[..., 0]
    return vec.reshape(d.shape)


def frobenius(m) -> np.ndarray:
    return np.sqrt(np.sum(np.square(m), axis=(-2, -1)))


def rel_frobenius_error(approx, exact, floor: float = 1e-300) -> np.ndarray:
    return frobenius(np.asarray(approx) - np.asarray(exact)) / np.maximum(frobenius(exact), floor)
