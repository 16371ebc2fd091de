"""State consistency filter: predict, gate, and merge per-Gaussian tracks.

Tracks are matched by index across frames. Each track runs a small state
machine:

* ``WARMUP``: fewer than two prior states. Observations pass through.
* ``ENGAGED``: a constant-velocity prediction is compared with the
  observation. Close agreement (engage) emits the merge of the two. A
  middling gap (hold) emits the observation but still feeds the merged
  state to the track memory. A large gap (revert) emits the observation,
  drops the velocity and marks the track reverted.
* ``REVERTED``: observations pass through and rebuild the history. As soon
  as a prediction from that history no longer diverges, the track restarts
  from ``WARMUP``.

:func:`track_sequence` runs all tracks of a frame as one batch.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .gaussian import Gaussian3, project_to_valid, sigma_scale, stack
from .geometry import GaussianVelocity, predict, velocity
from .spd_linalg import EPS_PD, project_spd, transpose


class CorrespondenceError(ValueError):
    """Frames do not carry the same number of Gaussians."""


class Status(IntEnum):
    WARMUP = 0
    ENGAGED = 1
    REVERTED = 2


class Decision(IntEnum):
    ENGAGE = 0
    HOLD = 1
    REVERT = 2


class Output(IntEnum):
    OBSERVATION = 0
    MERGED = 1


class History(IntEnum):
    PUSH = 0  # append the remembered Gaussian
    RESET = 1  # history becomes just the remembered Gaussian


@dataclass(frozen=True)
class Transition:
    status: Status
    output: Output
    history: History
    divergence: str  # "keep", "reset" or "increment"
    remember: Output | None = None  # what enters the history; defaults to `output`


# Keyed by (status, gate decision); a decision of None means the track had
# fewer than two prior states, so nothing could be predicted. WARMUP tracks
# never have two prior states: they turn ENGAGED as the second one arrives.
TRANSITIONS: dict[tuple[Status, Decision | None], Transition] = {
    (Status.WARMUP, None): Transition(Status.WARMUP, Output.OBSERVATION, History.PUSH, "keep"),
    (Status.ENGAGED, Decision.ENGAGE): Transition(Status.ENGAGED, Output.MERGED, History.PUSH, "reset"),
    (Status.ENGAGED, Decision.HOLD): Transition(
        Status.ENGAGED, Output.OBSERVATION, History.PUSH, "keep", remember=Output.MERGED
    ),
    (Status.ENGAGED, Decision.REVERT): Transition(Status.REVERTED, Output.OBSERVATION, History.RESET, "increment"),
    (Status.REVERTED, None): Transition(Status.REVERTED, Output.OBSERVATION, History.PUSH, "keep"),
    (Status.REVERTED, Decision.ENGAGE): Transition(Status.WARMUP, Output.OBSERVATION, History.RESET, "keep"),
    (Status.REVERTED, Decision.HOLD): Transition(Status.WARMUP, Output.OBSERVATION, History.RESET, "keep"),
    (Status.REVERTED, Decision.REVERT): Transition(Status.REVERTED, Output.OBSERVATION, History.PUSH, "increment"),
}


@dataclass(frozen=True)
class FilterConfig:
    engage_threshold: float = 0.1
    revert_threshold: float = 3.0
    epsilon_pd: float = EPS_PD

    def __post_init__(self):
        if not 0 < self.engage_threshold < self.revert_threshold:
            raise ValueError("need 0 < engage_threshold < revert_threshold")
        if not self.epsilon_pd > 0:
            raise ValueError("epsilon_pd must be positive")


def kalman_gain(sigma_ob, sigma_p) -> np.ndarray:
    """``K = S_ob (S_ob + S_p)^-1``."""
    sigma_ob = np.asarray(sigma_ob, dtype=float)
    total = sigma_ob + np.asarray(sigma_p, dtype=float)
    # K^T = total^-1 S_ob since both factors are symmetric
    return transpose(np.linalg.solve(total, sigma_ob))


def merge(obs: Gaussian3, pred: Gaussian3, eps: float = EPS_PD) -> Gaussian3:
    """Blend prediction into observation with the Kalman-style gain."""
    k = kalman_gain(obs.cov, pred.cov)
    mean = obs.mean + np.einsum("...ij,...j->...i", k, pred.mean - obs.mean)
    cov = obs.cov + k @ (pred.cov - obs.cov)
    return Gaussian3(mean, project_spd(cov, eps))


def gate_distance(pred: Gaussian3, obs: Gaussian3, eps: float = EPS_PD):
    """``(|mu_pred - mu_obs|, sigma_scale(obs))``."""
    dist = np.linalg.norm(pred.mean - obs.mean, axis=-1)
    return dist, sigma_scale(obs.cov, eps)


def _decide(dist, scale, cfg: FilterConfig) -> np.ndarray:
    out = np.full(np.shape(dist), Decision.HOLD, dtype=np.int8)
    out[np.asarray(dist < cfg.engage_threshold * scale)] = Decision.ENGAGE
    out[np.asarray(dist > cfg.revert_threshold * scale)] = Decision.REVERT
    return out


def gate(pred: Gaussian3, obs: Gaussian3, cfg: FilterConfig = FilterConfig()):
    dist, scale = gate_distance(pred, obs, cfg.epsilon_pd)
    d = _decide(dist, scale, cfg)
    return Decision(int(d)) if d.ndim == 0 else d


@dataclass
class TrackState:
    """Filter memory for one track."""

    prev: Gaussian3 | None = None
    prev2: Gaussian3 | None = None
    status: Status = Status.WARMUP
    consecutive_divergence_count: int = 0

    @property
    def velocity(self) -> GaussianVelocity | None:
        if self.prev2 is None:
            return None
        return velocity(self.prev2, self.prev)


@dataclass
class FrameLog:
    """Per-track bookkeeping for one processed frame (arrays over tracks)."""

    status: np.ndarray
    decision: np.ndarray  # -1 when no prediction was available
    gate_distance: np.ndarray  # nan when no prediction was available
    sigma_scale: np.ndarray
    left_manifold: np.ndarray


@dataclass
class _Bank:
    """Batched track memory; ``hist[:, 1]`` is the latest state."""

    mean: np.ndarray  # (N, 2, 3)
    cov: np.ndarray  # (N, 2, 3, 3)
    n_hist: np.ndarray  # (N,)
    status: np.ndarray  # (N,)
    divergence: np.ndarray  # (N,)

    @classmethod
    def empty(cls, n: int) -> "_Bank":
        return cls(
            np.zeros((n, 2, 3)),
            np.tile(np.eye(3), (n, 2, 1, 1)),
            np.zeros(n, dtype=np.int64),
            np.full(n, int(Status.WARMUP), dtype=np.int8),
            np.zeros(n, dtype=np.int64),
        )


def _step_bank(bank: _Bank, obs: Gaussian3, cfg: FilterConfig) -> tuple[Gaussian3, FrameLog]:
    n = bank.n_hist.shape[0]
    eps = cfg.epsilon_pd
    out_mean = obs.mean.copy()
    out_cov = obs.cov.copy()
    decision = np.full(n, -1, dtype=np.int8)
    dist = np.full(n, np.nan)
    left = np.zeros(n, dtype=bool)
    scale = sigma_scale(obs.cov, eps)

    ready = bank.n_hist >= 2
    merged = None
    if np.any(ready):
        idx = np.flatnonzero(ready)
        prev2 = Gaussian3(bank.mean[idx, 0], bank.cov[idx, 0])
        prev = Gaussian3(bank.mean[idx, 1], bank.cov[idx, 1])
        sub_obs = obs[idx]
        pred, lm = predict(prev, velocity(prev2, prev))
        lm = np.asarray(lm, dtype=bool)
        d = np.linalg.norm(pred.mean - sub_obs.mean, axis=-1)
        dec = _decide(d, scale[idx], cfg)
        # a prediction clamped back onto the SPD cone is not trusted this frame
        dec = np.where(lm, Decision.HOLD, dec).astype(np.int8)
        decision[idx], dist[idx], left[idx] = dec, d, lm
        merged = (idx, merge(sub_obs, pred, eps))

    new_status = bank.status.copy()
    mem_mean = obs.mean.copy()
    mem_cov = obs.cov.copy()
    reset = np.zeros(n, dtype=bool)
    for (status, dec), tr in TRANSITIONS.items():
        if dec is None:
            mask = (bank.status == status) & (decision < 0)
        else:
            mask = (bank.status == status) & (decision == dec)
        if not np.any(mask):
            continue
        new_status[mask] = tr.status
        reset[mask] = tr.history is History.RESET
        if tr.divergence == "reset":
            bank.divergence[mask] = 0
        elif tr.divergence == "increment":
            bank.divergence[mask] += 1
        if tr.output is Output.MERGED:
            idx, m = merged
            sel = mask[idx]
            out_mean[idx[sel]] = m.mean[sel]
            out_cov[idx[sel]] = m.cov[sel]
        remember = tr.output if tr.remember is None else tr.remember
        if remember is Output.MERGED:
            idx, m = merged
            sel = mask[idx]
            mem_mean[idx[sel]] = m.mean[sel]
            mem_cov[idx[sel]] = m.cov[sel]

    mem_mean[left] = obs.mean[left]
    mem_cov[left] = obs.cov[left]
    push = ~reset
    bank.mean[push, 0] = bank.mean[push, 1]
    bank.cov[push, 0] = bank.cov[push, 1]
    bank.mean[:, 1] = mem_mean
    bank.cov[:, 1] = mem_cov
    bank.n_hist = np.where(reset, 1, np.minimum(bank.n_hist + 1, 2))
    # a warmup track with a full history starts predicting next frame
    new_status = np.where((new_status == Status.WARMUP) & (bank.n_hist >= 2), Status.ENGAGED, new_status)
    bank.status = new_status.astype(np.int8)

    log = FrameLog(bank.status.copy(), decision, dist, scale, left)
    return Gaussian3(out_mean, out_cov), log


def step(track: TrackState, obs: Gaussian3, cfg: FilterConfig = FilterConfig()) -> tuple[TrackState, Gaussian3]:
    """Advance a single track by one observation."""
    bank = _Bank.empty(1)
    hist = [g for g in (track.prev2, track.prev) if g is not None]
    for slot, g in zip(range(2 - len(hist), 2), hist):
        bank.mean[0, slot] = g.mean
        bank.cov[0, slot] = g.cov
    bank.n_hist[0] = len(hist)
    bank.status[0] = track.status
    bank.divergence[0] = track.consecutive_divergence_count
    out, _ = _step_bank(bank, stack([obs]), cfg)
    n = int(bank.n_hist[0])
    new = TrackState(
        prev=Gaussian3(bank.mean[0, 1], bank.cov[0, 1]),
        prev2=Gaussian3(bank.mean[0, 0], bank.cov[0, 0]) if n >= 2 else None,
        status=Status(int(bank.status[0])),
        consecutive_divergence_count=int(bank.divergence[0]),
    )
    return new, out[0]


@dataclass
class StatusLog:
    frames: list[FrameLog] = field(default_factory=list)

    def rows(self):
        for t, fl in enumerate(self.frames):
            for i in range(fl.status.shape[0]):
                d = fl.gate_distance[i]
                yield (
                    t,
                    i,
                    Status(int(fl.status[i])).name.lower(),
                    "" if np.isnan(d) else repr(float(d)),
                    repr(float(fl.sigma_scale[i])),
                )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "index", "status", "gate_distance", "sigma_scale"])
        w.writerows(self.rows())
        return buf.getvalue()

    def count(self, status: Status) -> int:
        return int(sum(np.sum(fl.status == status) for fl in self.frames))


def _as_frame(frame) -> Gaussian3:
    g = stack(frame)
    if g.mean.ndim != 2:
        raise CorrespondenceError("each frame must be a list or stack of Gaussians")
    return g


def track_sequence(
    observations: Sequence[Gaussian3 | Sequence[Gaussian3]],
    cfg: FilterConfig = FilterConfig(),
) -> tuple[list[Gaussian3], StatusLog]:
    """Filter every track of a sequence; returns per-frame outputs and the log."""
    frames = [_as_frame(f) for f in observations]
    log = StatusLog()
    if not frames:
        return [], log
    n = len(frames[0])
    for t, f in enumerate(frames):
        if len(f) != n:
            raise CorrespondenceError(f"frame {t} has {len(f)} Gaussians, expected {n}")
    bank = _Bank.empty(n)
    outputs = []
    for f in frames:
        out, fl = _step_bank(bank, project_to_valid(f, cfg.epsilon_pd), cfg)
        outputs.append(out)
        log.frames.append(fl)
    return outputs, log
