"""Wasserstein regularization losses and their Euclidean baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .filter import CorrespondenceError
from .gaussian import Gaussian3, stack
from .metric import w2_squared
from .spd_linalg import InvalidInputError

Reduction = Literal["sum", "mean"]


@dataclass(frozen=True)
class LossWeights:
    lambda_soa: float = 0.1
    lambda_wr: float = 0.01

    def __post_init__(self):
        for name in ("lambda_soa", "lambda_wr"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def _frames(sequence) -> list[Gaussian3]:
    frames = [stack(f) for f in sequence]
    if frames:
        n = frames[0].batch_shape
        for t, f in enumerate(frames):
            if f.batch_shape != n:
                raise CorrespondenceError(f"frame {t} has shape {f.batch_shape}, expected {n}")
    return frames


def _sum_terms(terms: list[np.ndarray], reduction: Reduction) -> float:
    flat = np.concatenate([np.ravel(t) for t in terms]) if terms else np.zeros(0)
    total = math.fsum(flat)
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / flat.size if flat.size else 0.0
    raise ValueError(f"unknown reduction {reduction!r}")


def soa_loss(pred: Gaussian3, obs: Gaussian3):
    """State-observation alignment: ``W2^2(pred, obs)``."""
    return w2_squared(pred, obs)


def wr_loss(sequence, reduction: Reduction = "sum") -> float:
    """Sum of ``W2^2`` between consecutive frames, matched by index.

    ``reduction="mean"`` divides by the number of (frame pair, Gaussian)
    terms instead.
    """
    frames = _frames(sequence)
    terms = [w2_squared(frames[t], frames[t - 1]) for t in range(1, len(frames))]
    return _sum_terms(terms, reduction)


def _linear_term(a: Gaussian3, b: Gaussian3):
    return np.sum(np.square(a.mean - b.mean), axis=-1) + np.sum(np.square(a.cov - b.cov), axis=(-2, -1))


def linear_soa_loss(pred: Gaussian3, obs: Gaussian3):
    """Euclidean baseline: squared mean gap plus squared Frobenius covariance gap."""
    out = _linear_term(pred, obs)
    return float(out) if np.ndim(out) == 0 else out


def linear_wr_loss(sequence, reduction: Reduction = "sum") -> float:
    frames = _frames(sequence)
    terms = [_linear_term(frames[t], frames[t - 1]) for t in range(1, len(frames))]
    return _sum_terms(terms, reduction)


def total_loss(render_loss: float, soa: float, wr: float, w: LossWeights = LossWeights()) -> float:
    for name, v in (("render_loss", render_loss), ("soa", soa), ("wr", wr)):
        if not math.isfinite(v):
            raise InvalidInputError(f"{name} is not finite: {v}")
        if v < 0:
            raise InvalidInputError(f"{name} is negative: {v}")
    return render_loss + w.lambda_soa * soa + w.lambda_wr * wr
