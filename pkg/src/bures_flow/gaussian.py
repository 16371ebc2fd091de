"""3D Gaussian value types, rotation/scale conversion, and JSON atoms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .spd_linalg import (
    EPS_PD,
    InvalidInputError,
    eigh3,
    project_spd,
    transpose,
)


@dataclass(frozen=True, eq=False)
class Gaussian3:
    """A 3D Gaussian, or a stack of them sharing leading batch axes.

    ``mean`` has shape ``(..., 3)`` and ``cov`` shape ``(..., 3, 3)``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape[-1:] != (3,) or cov.shape[-2:] != (3, 3):
            raise InvalidInputError(f"bad Gaussian shapes: mean {mean.shape}, cov {cov.shape}")
        if mean.shape[:-1] != cov.shape[:-2]:
            raise InvalidInputError("mean and cov batch shapes differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidInputError("Gaussian has non-finite entries")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.mean.shape[:-1]

    def __len__(self) -> int:
        if not self.batch_shape:
            raise TypeError("single Gaussian has no length")
        return self.batch_shape[0]

    def __getitem__(self, idx) -> "Gaussian3":
        if not self.batch_shape:
            raise TypeError("single Gaussian is not indexable")
        return Gaussian3(self.mean[idx], self.cov[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def equals(self, other: "Gaussian3") -> bool:
        """Bitwise equality of means and covariances."""
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)


def stack(gaussians: Sequence[Gaussian3] | Gaussian3) -> Gaussian3:
    """Stack single Gaussians into a batch; batches pass through."""
    if isinstance(gaussians, Gaussian3):
        return gaussians
    gaussians = list(gaussians)
    if not gaussians:
        return Gaussian3(np.zeros((0, 3)), np.zeros((0, 3, 3)))
    return Gaussian3(
        np.stack([g.mean for g in gaussians]),
        np.stack([g.cov for g in gaussians]),
    )


@dataclass(frozen=True, eq=False)
class DecomposedCov:
    """Covariance as a unit quaternion ``(w, x, y, z)`` and per-axis std devs."""

    rotation: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        s = np.asarray(self.scale, dtype=float)
        if q.shape[-1:] != (4,) or s.shape[-1:] != (3,):
            raise InvalidInputError("rotation must be (..., 4) and scale (..., 3)")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(s))):
            raise InvalidInputError("non-finite rotation or scale")
        norm = np.linalg.norm(q, axis=-1)
        if np.any(np.abs(norm - 1.0) > 1e-9):
            raise InvalidInputError("rotation quaternion is not unit norm")
        if np.any(s < np.sqrt(EPS_PD) * (1 - 1e-12)):
            raise InvalidInputError("scale below sqrt(eps_pd)")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "scale", s)

    @classmethod
    def normalized(cls, rotation, scale, eps: float = EPS_PD) -> "DecomposedCov":
        """Build from a raw quaternion and scale, renormalizing and clamping."""
        q = np.asarray(rotation, dtype=float)
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        s = np.maximum(np.asarray(scale, dtype=float), np.sqrt(eps))
        return cls(q, s)

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def variances(self) -> np.ndarray:
        return np.square(self.scale)


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1, 4)
    mats = Rotation.from_quat(flat, scalar_first=True).as_matrix()
    return mats.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(r) -> np.ndarray:
    """Quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    r = np.asarray(r, dtype=float)
    flat = r.reshape(-1, 3, 3)
    q = Rotation.from_matrix(flat).as_quat(scalar_first=True)
    q = np.where(q[:, :1] < 0, -q, q)
    return q.reshape(r.shape[:-2] + (4,))


def compose_covariance(d: DecomposedCov) -> np.ndarray:
    """``R diag(scale)^2 R^T``."""
    r = d.matrix
    out = (r * d.variances[..., None, :]) @ transpose(r)
    return 0.5 * (out + transpose(out))


def decompose_covariance(cov) -> DecomposedCov:
    e = eigh3(cov)
    q = e.eigenvectors
    # fold reflections into the last column so the rotation is proper
    det = np.linalg.det(q)
    q = q.copy()
    q[..., :, 2] *= np.where(det < 0, -1.0, 1.0)[..., None]
    scale = np.sqrt(np.maximum(e.eigenvalues, EPS_PD))
    return DecomposedCov(matrix_to_quat(q), scale)


def project_to_valid(g: Gaussian3, eps: float = EPS_PD) -> Gaussian3:
    """Symmetrize the covariance and clamp its eigenvalues to ``eps``."""
    return Gaussian3(g.mean, project_spd(g.cov, eps))


def sigma_scale(cov, eps: float = EPS_PD) -> np.ndarray:
    """Geometric-mean standard deviation ``(l1 l2 l3)^(1/6)``."""
    lam = np.maximum(np.linalg.eigvalsh(np.asarray(cov, dtype=float)), eps)
    return np.exp(np.sum(np.log(lam), axis=-1) / 6.0)


# -- JSON atoms ---------------------------------------------------------------


def to_atom(g: Gaussian3) -> dict:
    """Single Gaussian as ``{"mean": [...], "rot": [w, x, y, z], "scale": [...]}``."""
    d = decompose_covariance(g.cov)
    return {
        "mean": [float(x) for x in g.mean],
        "rot": [float(x) for x in d.rotation],
        "scale": [float(x) for x in d.scale],
    }


def from_atom(atom: dict) -> Gaussian3:
    for key in ("mean", "rot", "scale"):
        if key not in atom:
            raise InvalidInputError(f"Gaussian atom missing field '{key}'")
    values = {}
    for key in ("mean", "rot", "scale"):
        try:
            values[key] = np.asarray(atom[key], dtype=float)
        except (TypeError, ValueError):
            raise InvalidInputError(f"field '{key}' must be a list of numbers") from None
    mean, rot, scale = values["mean"], values["rot"], values["scale"]
    if mean.shape != (3,):
        raise InvalidInputError("field 'mean' must have 3 numbers")
    if rot.shape != (4,):
        raise InvalidInputError("field 'rot' must have 4 numbers")
    if scale.shape != (3,):
        raise InvalidInputError("field 'scale' must have 3 numbers")
    if not np.all(np.isfinite(rot)) or np.linalg.norm(rot) == 0:
        raise InvalidInputError("field 'rot' must be a nonzero finite quaternion")
    if np.any(scale <= 0):
        raise InvalidInputError("field 'scale' must be positive")
    return Gaussian3(mean, compose_covariance(DecomposedCov.normalized(rot, scale)))


def frame_to_atoms(frame: Gaussian3 | Iterable[Gaussian3]) -> list[dict]:
    return [to_atom(g) for g in frame]


def frame_from_atoms(atoms: Sequence[dict]) -> Gaussian3:
    return stack([from_atom(a) for a in atoms])
