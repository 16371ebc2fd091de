"""Log/exp maps on the Bures-Wasserstein manifold of 3D Gaussians.

Conventions: the log map is anchored at the base point,
``Log_S(L) = (L S)^1/2 + (S L)^1/2 - 2 S``, evaluated through the optimal
transport map ``T`` from ``S`` to ``L`` as ``T S + S T - 2 S``. The exp map
inverts it via the Sylvester root ``G`` of ``G S + S G = V``:
``Exp_S(V) = S + V + G S G``. Velocities are reused at the next base point
without parallel transport.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import Gaussian3
from .spd_linalg import (
    EPS_PD,
    check_conditioning,
    clamp_eigenvalues,
    eigh3,
    reconstruct,
    solve_sylvester,
    sqrt_spd,
    symmetrize,
    transpose,
)


class LeftManifoldError(ArithmeticError):
    """An exponential that must stay on the manifold left the SPD cone."""


@dataclass(frozen=True, eq=False)
class GaussianVelocity:
    """Tangent vector of a Gaussian: mean rate and symmetric covariance rate.

    ``d_cov`` is tangent at the covariance of the state it was computed at.
    """

    d_mean: np.ndarray
    d_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_mean", np.asarray(self.d_mean, dtype=float))
        object.__setattr__(self, "d_cov", symmetrize(self.d_cov))

    @classmethod
    def zero(cls, batch_shape=()) -> "GaussianVelocity":
        return cls(np.zeros(batch_shape + (3,)), np.zeros(batch_shape + (3, 3)))


def transport_map(base, target, eps: float = EPS_PD) -> np.ndarray:
    """Optimal transport map ``T`` with ``T base T = target``."""
    e = clamp_eigenvalues(eigh3(base), eps)
    check_conditioning(e)
    root = reconstruct(e, np.sqrt)
    inv_root = reconstruct(e, lambda lam: 1.0 / np.sqrt(lam))
    middle = sqrt_spd(symmetrize(root @ target @ root), eps)
    return symmetrize(inv_root @ middle @ inv_root)


def log_map_cov(base, target, eps: float = EPS_PD) -> np.ndarray:
    t = transport_map(base, target, eps)
    tb = t @ base
    return symmetrize(tb + transpose(tb) - 2.0 * np.asarray(base, dtype=float))


def exp_map_cov(base, v, eps: float = EPS_PD) -> tuple[np.ndarray, np.ndarray | bool]:
    """Exponential map, projected back onto the SPD cone.

    Returns ``(cov, left_manifold)``. ``left_manifold`` is true where the raw
    result had an eigenvalue below ``eps`` and had to be clamped; it is a
    bool for a single matrix and a boolean array for a stack.
    """
    base = np.asarray(base, dtype=float)
    g = solve_sylvester(base, v, eps)
    raw = symmetrize(base + np.asarray(v, dtype=float) + g @ base @ transpose(g))
    e = eigh3(raw)
    left = e.eigenvalues[..., 0] < eps
    if np.any(left):
        fixed = reconstruct(type(e)(np.maximum(e.eigenvalues, eps), e.eigenvectors))
        raw = np.where(left[..., None, None], fixed, raw)
    return raw, (bool(left) if left.ndim == 0 else left)


def geodesic(a: Gaussian3, b: Gaussian3, s: float) -> Gaussian3:
    """Point at fraction ``s`` along the W2 geodesic from ``a`` to ``b``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"geodesic parameter must lie in [0, 1], got {s}")
    mean = (1.0 - s) * a.mean + s * b.mean
    cov, left = exp_map_cov(a.cov, s * log_map_cov(a.cov, b.cov))
    if np.any(left):
        raise LeftManifoldError("geodesic between SPD endpoints left the SPD cone")
    return Gaussian3(mean, cov)


def velocity(prev: Gaussian3, curr: Gaussian3) -> GaussianVelocity:
    """Velocity at ``curr``: ``-Log_curr(prev)``, mean part ``curr - prev``."""
    return GaussianVelocity(curr.mean - prev.mean, -log_map_cov(curr.cov, prev.cov))


def predict(curr: Gaussian3, v: GaussianVelocity) -> tuple[Gaussian3, np.ndarray | bool]:
    """One constant-velocity step; returns ``(prediction, left_manifold)``."""
    cov, left = exp_map_cov(curr.cov, v.d_cov)
    return Gaussian3(curr.mean + v.d_mean, cov), left
