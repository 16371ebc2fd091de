"""Synthetic dynamic scenes, observation noise, and filter evaluation.

Ground-truth trajectories stand in for a learned deformation field; the
"observer" is ground truth plus parametric noise. Scenes are lists of
frames, each frame a :class:`~bures_flow.gaussian.Gaussian3` stack of
shape ``(N,)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .filter import FilterConfig, StatusLog, track_sequence
from .gaussian import Gaussian3, decompose_covariance, quat_to_matrix, sigma_scale
from .metric import w2_squared
from .spd_linalg import transpose

Motion = Literal["constant_velocity", "circular", "scale_oscillation", "composite"]
MOTIONS = ("constant_velocity", "circular", "scale_oscillation", "composite")


class UndefinedMetricError(ValueError):
    """A metric has no valid samples to average."""


@dataclass(frozen=True)
class NoiseModel:
    mean_noise_std: float = 0.0  # per-axis, in units of sigma_scale
    rot_noise_std: float = 0.0  # radians, per axis-angle component
    scale_noise_std: float = 0.0  # std of log scale
    outlier_rate: float = 0.0
    outlier_magnitude: float = 10.0  # in units of sigma_scale

    def __post_init__(self):
        for name in ("mean_noise_std", "rot_noise_std", "scale_noise_std", "outlier_magnitude"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must lie in [0, 1]")

    @property
    def is_zero(self) -> bool:
        return (
            self.mean_noise_std == 0
            and self.rot_noise_std == 0
            and self.scale_noise_std == 0
            and self.outlier_rate == 0
        )


@dataclass(frozen=True)
class ScenarioConfig:
    n_gaussians: int = 64
    n_frames: int = 60
    motion: Motion = "composite"
    velocity: tuple[float, float, float] = (0.02, 0.01, 0.0)  # scene units / frame
    angular_rate: float = 0.02  # rad / frame about the z axis through `center`
    scale_amplitude: float = 0.2  # relative, in (0, 1)
    scale_period: float = 30.0  # frames
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extent: float = 1.0  # initial means uniform in [-extent, extent]^3
    scale_range: tuple[float, float] = (0.05, 0.15)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self):
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be positive")
        if self.n_frames < 3:
            raise ValueError("n_frames must be at least 3")
        if self.motion not in MOTIONS:
            raise ValueError(f"unknown motion {self.motion!r}")
        if self.motion in ("scale_oscillation", "composite") and not 0.0 <= self.scale_amplitude < 1.0:
            raise ValueError("scale_amplitude must lie in [0, 1)")
        if self.scale_period <= 0:
            raise ValueError("scale_period must be positive")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must be positive and ordered")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["velocity"] = list(self.velocity)
        d["center"] = list(self.center)
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "noise" in d:
            d["noise"] = NoiseModel(**d["noise"])
        for key in ("velocity", "center", "scale_range"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        return cls(**d)


DEFAULT_NOISE = NoiseModel(
    mean_noise_std=0.05,
    rot_noise_std=0.02,
    scale_noise_std=0.02,
    outlier_rate=0.01,
    outlier_magnitude=10.0,
)

PRESETS: dict[str, ScenarioConfig] = {
    "default": ScenarioConfig(noise=DEFAULT_NOISE),
    # constant velocity is the motion the filter predicts exactly, so both
    # modes sit at the numerical floor without noise
    "zero-noise": ScenarioConfig(motion="constant_velocity", noise=NoiseModel()),
    "linear": ScenarioConfig(motion="constant_velocity", noise=DEFAULT_NOISE),
}


@dataclass(frozen=True)
class PinholeCamera:
    """World-to-camera rotation plus intrinsics. The camera looks along +z."""

    position: np.ndarray
    rotation: np.ndarray  # rows are the camera x, y, z axes in world coords
    focal: float
    principal: tuple[float, float]
    resolution: tuple[int, int]

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    @classmethod
    def look_at(
        cls,
        position=(0.0, 0.0, -5.0),
        target=(0.0, 0.0, 0.0),
        up=(0.0, -1.0, 0.0),
        focal: float = 500.0,
        resolution: tuple[int, int] = (640, 480),
    ) -> "PinholeCamera":
        position = np.asarray(position, dtype=float)
        forward = np.asarray(target, dtype=float) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        w, h = resolution
        return cls(position, rot, focal, (w / 2.0, h / 2.0), resolution)

    def to_camera(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation.T

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and a positive-depth mask."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        valid = z > 0
        safe = np.where(valid, z, 1.0)
        uv = np.stack(
            [
                self.focal * pc[..., 0] / safe + self.principal[0],
                self.focal * pc[..., 1] / safe + self.principal[1],
            ],
            axis=-1,
        )
        return uv, valid


@dataclass
class Flow:
    uv: np.ndarray  # (T-1, N, 2) pixel displacements
    valid: np.ndarray  # (T-1, N)


@dataclass
class MetricsReport:
    mean_rmse: float
    w2_rmse: float
    temporal_roughness: float
    aepe_2d: float
    wr_loss: float
    per_frame_mean_rmse: np.ndarray
    per_frame_w2_rmse: np.ndarray
    per_frame_roughness: np.ndarray
    per_frame_aepe: np.ndarray

    def summary(self) -> dict[str, float]:
        return {
            "mean_rmse": self.mean_rmse,
            "w2_rmse": self.w2_rmse,
            "temporal_roughness": self.temporal_roughness,
            "aepe_2d": self.aepe_2d,
        }


def _rotz(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(np.shape(angle) + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def generate_scene(cfg: ScenarioConfig) -> list[Gaussian3]:
    """Ground-truth frames for a scenario; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng([cfg.seed, 0])
    n, frames = cfg.n_gaussians, cfg.n_frames
    mu0 = rng.uniform(-cfg.extent, cfg.extent, size=(n, 3))
    rot0 = Rotation.random(n, random_state=rng).as_matrix()
    lo, hi = cfg.scale_range
    scale0 = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(n, 3)))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1))

    t = np.arange(frames, dtype=float)[:, None]  # (T, 1)
    use_lin = cfg.motion in ("constant_velocity", "composite")
    use_rot = cfg.motion in ("circular", "composite")
    use_osc = cfg.motion in ("scale_oscillation", "composite")
    center = np.asarray(cfg.center, dtype=float)

    rz = _rotz(t[:, 0] * cfg.angular_rate) if use_rot else np.tile(np.eye(3), (frames, 1, 1))
    mean = center + np.einsum("tij,nj->tni", rz, mu0 - center)
    if use_lin:
        mean = mean + t[:, :, None] * np.asarray(cfg.velocity, dtype=float)
    rot = np.einsum("tij,njk->tnik", rz, rot0)
    if use_osc:
        factor = 1.0 + cfg.scale_amplitude * np.sin(2.0 * np.pi * t / cfg.scale_period + phase.T)
        scale = scale0[None] * factor[:, :, None]
    else:
        scale = np.broadcast_to(scale0, (frames, n, 3))
    cov = (rot * np.square(scale)[..., None, :]) @ transpose(rot)
    cov = 0.5 * (cov + transpose(cov))
    return [Gaussian3(mean[k], cov[k]) for k in range(frames)]


def perturb(scene: Sequence[Gaussian3], noise: NoiseModel, seed: int) -> list[Gaussian3]:
    """Noisy observations of a scene; deterministic in ``seed``."""
    if noise.is_zero:
        return [Gaussian3(f.mean.copy(), f.cov.copy()) for f in scene]
    rng = np.random.default_rng([seed, 1])
    mean = np.stack([f.mean for f in scene])
    cov = np.stack([f.cov for f in scene])
    shape = mean.shape[:-1]
    sig = sigma_scale(cov)[..., None]

    dec = decompose_covariance(cov)
    r = quat_to_matrix(dec.rotation)
    scale = dec.scale * np.exp(noise.scale_noise_std * rng.standard_normal(shape + (3,)))
    rotvec = noise.rot_noise_std * rng.standard_normal(shape + (3,))
    r = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(shape + (3, 3)) @ r
    new_cov = (r * np.square(scale)[..., None, :]) @ transpose(r)
    new_cov = 0.5 * (new_cov + transpose(new_cov))

    new_mean = mean + noise.mean_noise_std * sig * rng.standard_normal(shape + (3,))
    direction = rng.standard_normal(shape + (3,))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    is_outlier = rng.uniform(size=shape) < noise.outlier_rate
    outlier_mean = mean + noise.outlier_magnitude * sig * direction
    new_mean = np.where(is_outlier[..., None], outlier_mean, new_mean)
    return [Gaussian3(new_mean[k], new_cov[k]) for k in range(len(scene))]


def project_flow(camera: PinholeCamera, scene: Sequence[Gaussian3]) -> Flow:
    """Pixel displacement of every mean between consecutive frames."""
    means = np.stack([f.mean for f in scene])
    uv, valid = camera.project(means)
    return Flow(uv[1:] - uv[:-1], valid[1:] & valid[:-1])


def aepe(est: Flow, gt: Flow) -> float:
    """Average endpoint error over points valid in both flows."""
    if est.uv.shape != gt.uv.shape:
        raise ValueError(f"flow shapes differ: {est.uv.shape} vs {gt.uv.shape}")
    ok = est.valid & gt.valid
    if not np.any(ok):
        raise UndefinedMetricError("no valid flow vectors to compare")
    err = np.linalg.norm(est.uv - gt.uv, axis=-1)[ok]
    return math.fsum(err) / err.size


def _per_frame_aepe(est: Flow, gt: Flow) -> np.ndarray:
    ok = est.valid & gt.valid
    err = np.where(ok, np.linalg.norm(est.uv - gt.uv, axis=-1), 0.0)
    counts = ok.sum(axis=1)
    return np.where(counts > 0, err.sum(axis=1) / np.maximum(counts, 1), np.nan)


def _stack_frames(frames: Sequence[Gaussian3]) -> Gaussian3:
    return Gaussian3(np.stack([f.mean for f in frames]), np.stack([f.cov for f in frames]))


def evaluate(
    estimates: Sequence[Gaussian3],
    truth: Sequence[Gaussian3],
    camera: PinholeCamera | None = None,
) -> MetricsReport:
    """Compare estimated frames against ground truth."""
    camera = camera or PinholeCamera.look_at()
    est = _stack_frames(estimates)
    gt = _stack_frames(truth)
    sq = np.sum(np.square(est.mean - gt.mean), axis=-1)
    w2sq_gt = np.atleast_2d(w2_squared(est, gt))
    # consecutive-frame terms feed both the roughness and the WR loss
    w2sq_step = np.atleast_2d(w2_squared(est[1:], est[:-1]))
    step = np.sqrt(w2sq_step)

    est_flow = project_flow(camera, estimates)
    gt_flow = project_flow(camera, truth)
    return MetricsReport(
        mean_rmse=math.sqrt(math.fsum(sq.ravel()) / sq.size),
        w2_rmse=math.sqrt(math.fsum(w2sq_gt.ravel()) / w2sq_gt.size),
        temporal_roughness=math.fsum(step.ravel()) / step.size,
        aepe_2d=aepe(est_flow, gt_flow),
        wr_loss=math.fsum(w2sq_step.ravel()),
        per_frame_mean_rmse=np.sqrt(sq.mean(axis=1)),
        per_frame_w2_rmse=np.sqrt(w2sq_gt.mean(axis=1)),
        per_frame_roughness=step.mean(axis=1),
        per_frame_aepe=_per_frame_aepe(est_flow, gt_flow),
    )


@dataclass
class ExperimentResult:
    truth: list[Gaussian3]
    observations: list[Gaussian3]
    estimates: list[Gaussian3]
    metrics: MetricsReport
    status_log: StatusLog | None


MODES = ("obs_only", "filtered")


def run_experiment(
    cfg: ScenarioConfig,
    filter_cfg: FilterConfig = FilterConfig(),
    mode: Literal["obs_only", "filtered"] = "filtered",
    camera: PinholeCamera | None = None,
) -> ExperimentResult:
    """Generate, observe, optionally filter, and score one scenario."""
    return run_modes(cfg, filter_cfg, (mode,), camera)[mode]


def run_modes(
    cfg: ScenarioConfig,
    filter_cfg: FilterConfig = FilterConfig(),
    modes: Sequence[str] = MODES,
    camera: PinholeCamera | None = None,
) -> dict[str, ExperimentResult]:
    """Like :func:`run_experiment` for several modes over one shared scene."""
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
    truth = generate_scene(cfg)
    obs = perturb(truth, cfg.noise, cfg.seed)
    out = {}
    for mode in modes:
        log = None
        if mode == "filtered":
            estimates, log = track_sequence(obs, filter_cfg)
        else:
            estimates = obs
        out[mode] = ExperimentResult(truth, obs, estimates, evaluate(estimates, truth, camera), log)
    return out


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=seed)
