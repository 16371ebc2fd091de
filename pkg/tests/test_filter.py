import copy
import itertools

import numpy as np
import pytest

from bures_flow.filter import (
    TRANSITIONS,
    CorrespondenceError,
    Decision,
    FilterConfig,
    History,
    Output,
    Status,
    TrackState,
    _Bank,
    _step_bank,
    gate,
    kalman_gain,
    merge,
    step,
    track_sequence,
)
from bures_flow.gaussian import Gaussian3, project_to_valid, stack
from bures_flow.geometry import predict, velocity
from bures_flow.sim import NoiseModel, ScenarioConfig, run_modes
from bures_flow.spd_linalg import EPS_PD, is_spd
from bures_flow.testing import random_gaussian, random_spd

I3 = np.eye(3)


def at(x, cov=I3):
    return Gaussian3(np.array([x, 0.0, 0.0]), cov)


class TestKalmanGain:
    def test_equal_covariances(self, rng):
        c = random_spd(rng)
        assert np.allclose(kalman_gain(c, c), 0.5 * I3, atol=1e-12)

    def test_tiny_observation_covariance(self):
        k = kalman_gain(EPS_PD * I3, I3)
        assert np.allclose(k, EPS_PD / (1 + EPS_PD) * I3, rtol=1e-12, atol=0)

    def test_per_axis_ratio(self):
        k = kalman_gain(np.diag([1.0, 2.0, 3.0]), np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(k, np.diag([0.25, 0.5, 0.75]), atol=1e-15)

    def test_matches_explicit_inverse(self, rng):
        a, b = random_spd(rng, 50), random_spd(rng, 50)
        assert np.allclose(kalman_gain(a, b), a @ np.linalg.inv(a + b), atol=1e-10)

    def test_symmetric_part_in_unit_interval(self, rng):
        k = kalman_gain(random_spd(rng, 200, cond_max=10), random_spd(rng, 200, cond_max=10))
        # K is similar to a symmetric matrix with spectrum in (0, 1)
        lam = np.linalg.eigvals(k).real
        assert np.all((lam > 0) & (lam < 1))


class TestMerge:
    def test_fixed_point(self, rng):
        g = random_gaussian(rng)
        m = merge(g, g)
        assert np.array_equal(m.mean, g.mean)
        assert np.allclose(m.cov, g.cov, rtol=0, atol=1e-15 * np.abs(g.cov).max())

    def test_midpoint(self):
        m = merge(at(0.0), at(2.0))
        assert np.allclose(m.mean, [1, 0, 0])

    def test_per_axis_gain(self):
        obs = Gaussian3(np.zeros(3), np.diag([1.0, 2.0, 3.0]))
        pred = Gaussian3(np.full(3, 4.0), np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(merge(obs, pred).mean, [1.0, 2.0, 3.0])

    def test_mean_between_in_shared_eigendirections(self, rng):
        from bures_flow.testing import random_rotation

        for _ in range(100):
            r = random_rotation(rng)
            obs = Gaussian3(rng.standard_normal(3), (r * rng.uniform(0.1, 2, 3)) @ r.T)
            pred = Gaussian3(rng.standard_normal(3), (r * rng.uniform(0.1, 2, 3)) @ r.T)
            m = r.T @ merge(obs, pred).mean
            lo = np.minimum(r.T @ obs.mean, r.T @ pred.mean)
            hi = np.maximum(r.T @ obs.mean, r.T @ pred.mean)
            assert np.all((m >= lo - 1e-12) & (m <= hi + 1e-12))

    def test_merged_covariance_valid(self, rng):
        obs, pred = random_gaussian(rng, 200), random_gaussian(rng, 200)
        assert is_spd(merge(obs, pred).cov)

    def test_diagonal_convexity(self, rng):
        for _ in range(50):
            obs = Gaussian3(rng.standard_normal(3), np.diag(rng.uniform(0.1, 2, 3)))
            pred = Gaussian3(rng.standard_normal(3), np.diag(rng.uniform(0.1, 2, 3)))
            m = merge(obs, pred).mean
            assert np.all(m >= np.minimum(obs.mean, pred.mean) - 1e-12)
            assert np.all(m <= np.maximum(obs.mean, pred.mean) + 1e-12)


class TestGate:
    def test_equal_engages(self):
        assert gate(at(0.0), at(0.0)) is Decision.ENGAGE

    def test_thresholds(self):
        assert gate(at(0.0), at(5.0)) is Decision.REVERT
        assert gate(at(0.0), at(1.0)) is Decision.HOLD
        assert gate(at(0.0), at(0.0999)) is Decision.ENGAGE
        assert gate(at(0.0), at(0.1)) is Decision.HOLD
        assert gate(at(0.0), at(3.0)) is Decision.HOLD
        assert gate(at(0.0), at(3.0 + 1e-9)) is Decision.REVERT

    def test_uses_observation_scale(self):
        # sigma_scale of 4I is 2, so a unit offset sits below 3 sigma
        assert gate(at(0.0), at(5.0, 4 * I3)) is Decision.HOLD
        assert gate(at(0.0), at(7.0, 4 * I3)) is Decision.REVERT

    def test_defaults(self):
        cfg = FilterConfig()
        assert (cfg.engage_threshold, cfg.revert_threshold, cfg.epsilon_pd) == (0.1, 3.0, 1e-8)

    @pytest.mark.parametrize("kw", [{"engage_threshold": 0}, {"engage_threshold": 3, "revert_threshold": 3},
                                    {"epsilon_pd": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            FilterConfig(**kw)


class TestStep:
    def test_warmup_passes_observations(self, rng):
        track = TrackState()
        for _ in range(2):
            g = random_gaussian(rng)
            track, out = step(track, g)
            assert out.equals(g)
        assert track.status is Status.ENGAGED
        assert track.velocity is not None

    def test_noiseless_constant_velocity(self):
        track = TrackState()
        for t in range(3):
            g = Gaussian3(np.array([0.01 * t, 0.0, 0.0]), I3)
            track, out = step(track, g)
        assert np.allclose(out.mean, g.mean, atol=1e-15)
        assert np.allclose(out.cov, g.cov, atol=1e-14)

    def test_outlier_reverts(self):
        track = TrackState()
        for _ in range(3):
            track, _ = step(track, at(0.0))
        outlier = at(10.0)
        track, out = step(track, outlier)
        assert track.status is Status.REVERTED
        assert out.equals(outlier)
        assert track.consecutive_divergence_count == 1
        assert track.velocity is None

    def test_left_manifold_forces_hold(self):
        # a shrinking covariance extrapolates past zero
        track = TrackState()
        for c in (4.0, 1.0):
            track, _ = step(track, Gaussian3(np.zeros(3), c * I3))
        obs = Gaussian3(np.zeros(3), 0.01 * I3)
        bank = _Bank.empty(1)
        bank.mean[0] = 0.0
        bank.cov[0, 0], bank.cov[0, 1] = 4.0 * I3, 1.0 * I3
        bank.n_hist[0] = 2
        bank.status[0] = Status.ENGAGED
        out, log = _step_bank(bank, stack([obs]), FilterConfig())
        assert log.left_manifold[0]
        assert log.decision[0] == Decision.HOLD
        assert out[0].equals(obs)
        assert np.array_equal(bank.cov[0, 1], obs.cov)


class TestTransitionTable:
    ALPHABET = (0.0, 0.05, 1.0, 10.0)

    def test_exhaustive_enumeration(self):
        """Every observation pattern of length 6 follows the table, step by step."""
        length = len(self.ALPHABET)
        patterns = np.array(list(itertools.product(range(length), repeat=6)))
        n = len(patterns)
        cfg = FilterConfig()
        bank = _Bank.empty(n)
        seen = set()
        for t in range(patterns.shape[1]):
            offsets = np.array(self.ALPHABET)[patterns[:, t]]
            obs = Gaussian3(np.stack([offsets, np.zeros(n), np.zeros(n)], -1), np.tile(I3, (n, 1, 1)))
            before = copy.deepcopy(bank)
            out, log = _step_bank(bank, obs, cfg)
            for i in range(n):
                dec = None if log.decision[i] < 0 else Decision(int(log.decision[i]))
                key = (Status(int(before.status[i])), dec)
                seen.add(key)
                tr = TRANSITIONS[key]
                want = tr.status
                if want is Status.WARMUP and bank.n_hist[i] >= 2:
                    want = Status.ENGAGED
                assert bank.status[i] == want, (key, i, t)
                if tr.output is Output.MERGED:
                    prev2 = Gaussian3(before.mean[i, 0], before.cov[i, 0])
                    prev = Gaussian3(before.mean[i, 1], before.cov[i, 1])
                    pred, _ = predict(prev, velocity(prev2, prev))
                    assert np.allclose(out.mean[i], merge(obs[i], pred).mean, atol=1e-14)
                    assert key[1] is Decision.ENGAGE
                else:
                    assert np.array_equal(out.mean[i], obs.mean[i])
                if tr.history is History.RESET:
                    assert bank.n_hist[i] == 1
                else:
                    assert bank.n_hist[i] == min(before.n_hist[i] + 1, 2)
                    if before.n_hist[i] >= 1:
                        assert np.array_equal(bank.mean[i, 0], before.mean[i, 1])
                expected_div = {"keep": before.divergence[i], "reset": 0,
                                "increment": before.divergence[i] + 1}[tr.divergence]
                assert bank.divergence[i] == expected_div
                # reverted tracks never merge and warmup never reverts directly
                if key[0] is Status.REVERTED:
                    assert tr.output is Output.OBSERVATION
                if key[0] is Status.WARMUP:
                    assert bank.status[i] != Status.REVERTED
        assert seen == set(TRANSITIONS)

    def test_scripted_outlier_recovery(self):
        track = TrackState()
        statuses = []
        for t in range(10):
            track, _ = step(track, at(10.0 if t == 3 else 0.0))
            statuses.append(track.status)
        W, E, R = Status.WARMUP, Status.ENGAGED, Status.REVERTED
        assert statuses == [W, E, E, R, R, R, W, E, E, E]


class TestTrackSequence:
    def test_static_noiseless(self, rng):
        g = random_gaussian(rng)
        frames = [[g] for _ in range(10)]
        out, log = track_sequence(frames)
        for f in out:
            assert np.allclose(f.mean[0], g.mean, atol=1e-14)
            assert np.allclose(f.cov[0], g.cov, rtol=1e-12, atol=1e-14)
        assert log.count(Status.REVERTED) == 0

    def test_empty(self):
        out, log = track_sequence([])
        assert out == [] and log.frames == []

    def test_count_mismatch_names_frame(self, rng):
        frames = [[random_gaussian(rng)] * 2, [random_gaussian(rng)] * 2, [random_gaussian(rng)] * 3]
        with pytest.raises(CorrespondenceError, match="frame 2"):
            track_sequence(frames)

    def test_deterministic_and_independent_of_batching(self, rng):
        frames = [random_gaussian(rng, 5, scale=0.01, spread=0.1) for _ in range(8)]
        a, log_a = track_sequence(frames)
        b, _ = track_sequence(frames)
        assert all(x.equals(y) for x, y in zip(a, b))
        for i in range(5):
            single, _ = track_sequence([[f[i]] for f in frames])
            for t in range(8):
                assert np.array_equal(single[t].mean[0], a[t].mean[i])
        assert log_a.to_csv().splitlines()[0] == "frame,index,status,gate_distance,sigma_scale"

    def test_outputs_valid(self, rng):
        frames = [random_gaussian(rng, 10, scale=0.05, spread=0.3) for _ in range(12)]
        for f in track_sequence(frames)[0]:
            assert np.array_equal(project_to_valid(f).cov, f.cov)

    def test_linear_motion_noise_reduction(self):
        cfg = ScenarioConfig(motion="constant_velocity", noise=NoiseModel(mean_noise_std=0.05))
        wins = 0
        for seed in range(20):
            runs = run_modes(ScenarioConfig(**{**cfg.__dict__, "seed": seed}))
            wins += runs["filtered"].metrics.mean_rmse < runs["obs_only"].metrics.mean_rmse
        assert wins == 20
