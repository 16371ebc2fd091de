"""Random generators and derivative helpers shared by the property suites."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry
from .gaussian import DecomposedCov, Gaussian3, compose_covariance, matrix_to_quat
from .metric import w2_squared
from .spd_linalg import solve_sylvester, transpose


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    n = 1 if size is None else size
    r = Rotation.random(n, random_state=rng).as_matrix()
    return r[0] if size is None else r


def random_eigenvalues(rng, size=None, cond_max: float = 1e3, scale: float = 1.0, min_gap: float = 0.0):
    """Log-uniform eigenvalues whose ratio stays within ``cond_max``.

    ``min_gap`` rejects draws whose sorted log-eigenvalues are closer than
    that, keeping samples away from repeated eigenvalues.
    """
    shape = (() if size is None else (size,)) + (3,)
    while True:
        logs = rng.uniform(0.0, np.log(cond_max), size=shape)
        if min_gap <= 0:
            break
        gaps = np.diff(np.sort(logs, axis=-1), axis=-1)
        if np.all(gaps >= min_gap):
            break
    return scale * np.exp(logs)


def random_spd(rng, size=None, cond_max: float = 1e3, scale: float = 1.0, min_gap: float = 0.0) -> np.ndarray:
    lam = random_eigenvalues(rng, size, cond_max, scale, min_gap)
    q = random_rotation(rng, size)
    out = (q * lam[..., None, :]) @ transpose(q)
    return 0.5 * (out + transpose(out))


def random_gaussian(rng, size=None, cond_max: float = 1e3, scale: float = 1.0, spread: float = 1.0) -> Gaussian3:
    shape = () if size is None else (size,)
    return Gaussian3(spread * rng.standard_normal(shape + (3,)), random_spd(rng, size, cond_max, scale))


def random_decomposed(rng, size=None, cond_max: float = 1e3, scale: float = 1.0) -> DecomposedCov:
    lam = random_eigenvalues(rng, size, cond_max, scale)
    q = matrix_to_quat(random_rotation(rng, size))
    return DecomposedCov(q, np.sqrt(lam))


def random_symmetric(rng, size=None, scale: float = 1.0) -> np.ndarray:
    shape = (() if size is None else (size,)) + (3, 3)
    m = scale * rng.standard_normal(shape)
    return 0.5 * (m + transpose(m))


# -- derivatives of W2^2 --------------------------------------------------------


def _skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def perturbed(mean, rot, scale, d_mean, d_rotvec, d_scale, h: float) -> Gaussian3:
    """Gaussian at parameters ``(mean, exp([h d_rotvec]) R, scale)`` moved by ``h``."""
    r = Rotation.from_rotvec(h * np.asarray(d_rotvec)).as_matrix() @ rot
    s = np.asarray(scale) + h * np.asarray(d_scale)
    cov = compose_covariance(DecomposedCov(matrix_to_quat(r), s))
    return Gaussian3(np.asarray(mean) + h * np.asarray(d_mean), cov)


def w2_directional_derivative(a: Gaussian3, b: Gaussian3, d_mean, d_cov) -> float:
    """Derivative of ``W2^2(a, b)`` as ``a`` moves along ``(d_mean, d_cov)``.

    The covariance gradient is ``-G`` with ``G`` the Sylvester root of
    ``Log_a(b)`` at ``a``, which is the first variation of half the squared
    distance under the Bures metric.
    """
    log = geometry.log_map_cov(a.cov, b.cov)
    g = solve_sylvester(a.cov, log)
    return float(2.0 * np.dot(a.mean - b.mean, d_mean) - np.trace(g @ d_cov))


def parameter_tangent(rot, scale, d_rotvec, d_scale) -> np.ndarray:
    """Covariance velocity induced by rotation-vector and scale rates."""
    cov = (rot * np.square(scale)) @ rot.T
    k = _skew(d_rotvec)
    return k @ cov - cov @ k + (rot * (2.0 * np.asarray(scale) * np.asarray(d_scale))) @ rot.T


def central_difference(a_params, b: Gaussian3, direction, h: float = 1e-5) -> float:
    mean, rot, scale = a_params
    plus = w2_squared(perturbed(mean, rot, scale, *direction, h), b)
    minus = w2_squared(perturbed(mean, rot, scale, *direction, -h), b)
    return (plus - minus) / (2.0 * h)
