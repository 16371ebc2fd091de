"""Bures-Wasserstein geometry of 3D Gaussians and a state consistency filter."""

from .filter import FilterConfig, Status, TrackState, kalman_gain, merge, step, track_sequence
from .gaussian import (
    DecomposedCov,
    Gaussian3,
    compose_covariance,
    decompose_covariance,
    project_to_valid,
    stack,
)
from .geometry import GaussianVelocity, exp_map_cov, geodesic, log_map_cov, predict, velocity
from .losses import LossWeights, linear_soa_loss, linear_wr_loss, soa_loss, total_loss, wr_loss
from .metric import tangent_norm_squared, w2_distance, w2_squared, w2_trace_term_decomposed

__all__ = [
    "DecomposedCov",
    "FilterConfig",
    "Gaussian3",
    "GaussianVelocity",
    "LossWeights",
    "Status",
    "TrackState",
    "compose_covariance",
    "decompose_covariance",
    "exp_map_cov",
    "geodesic",
    "kalman_gain",
    "linear_soa_loss",
    "linear_wr_loss",
    "log_map_cov",
    "merge",
    "predict",
    "project_to_valid",
    "soa_loss",
    "stack",
    "step",
    "tangent_norm_squared",
    "total_loss",
    "track_sequence",
    "velocity",
    "w2_distance",
    "w2_squared",
    "w2_trace_term_decomposed",
    "wr_loss",
]
