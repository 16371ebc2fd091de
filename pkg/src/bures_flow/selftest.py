"""Property suite behind ``bures-flow selftest``.

Each check draws seeded random inputs, measures the worst observed error
and compares it with a tolerance. A failing check records the seed and the
index of the worst sample so the case can be replayed.
"""

from __future__ import annotations

import contextlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Iterator

import numpy as np

from . import geometry
from .filter import (
    TRANSITIONS,
    Decision,
    FilterConfig,
    History,
    Output,
    Status,
    TrackState,
    _Bank,
    _step_bank,
    gate,
    step,
)
from .gaussian import Gaussian3, compose_covariance
from .losses import LossWeights, linear_soa_loss, linear_wr_loss, total_loss
from .metric import trace_term, w2_distance, w2_squared, w2_trace_term_decomposed, tangent_norm_squared
from .sim import PRESETS, run_modes, with_seed
from .spd_linalg import rel_frobenius_error, solve_sylvester, solve_sylvester_kron, symmetrize
from .testing import (
    central_difference,
    parameter_tangent,
    random_decomposed,
    random_eigenvalues,
    random_gaussian,
    random_rotation,
    random_spd,
    random_symmetric,
    w2_directional_derivative,
)

REPORT_SCHEMA = "bures-flow/selftest-report/1"
PROFILES = {"default": 1.0, "strict": 0.1}


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    tolerance: float
    seed: int
    detail: str = ""
    worst_index: int | None = None


@dataclass
class Report:
    profile: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "profile": self.profile,
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_schema() -> dict:
    text = resources.files("bures_flow").joinpath("selftest_report.schema.json").read_text()
    return json.loads(text)


def _worst(errors) -> tuple[float, int]:
    errors = np.asarray(errors, dtype=float).ravel()
    i = int(np.argmax(errors))
    return float(errors[i]), i


def _result(name, errors, tol, seed, detail="") -> CheckResult:
    worst, idx = _worst(errors)
    return CheckResult(name, bool(worst <= tol), worst, tol, seed, detail, idx)


# -- individual properties ------------------------------------------------------


def check_metric_axioms(seed: int = 101, n: int = 1000, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    a, b, c = (random_gaussian(rng, n) for _ in range(3))
    ident = np.atleast_1d(w2_distance(a, a))
    ab, ba = w2_distance(a, b), w2_distance(b, a)
    sym = np.abs(ab - ba) / np.maximum(ab, 1.0)
    tri = w2_distance(a, c) - (ab + w2_distance(b, c))
    return [
        _result("metric.identity", ident, 1e-9 * factor, seed),
        _result("metric.symmetry", sym, 1e-10 * factor, seed),
        _result("metric.triangle", np.maximum(tri, 0.0), 1e-9 * factor, seed),
    ]


def check_decomposition(seed: int = 102, n: int = 1000, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    da, db = random_decomposed(rng, n), random_decomposed(rng, n)
    full = trace_term(compose_covariance(da), compose_covariance(db))
    dec = w2_trace_term_decomposed(da, db)
    err = np.abs(dec - full) / np.maximum(np.abs(full), 1e-12)
    return [_result("metric.decomposed_trace", err, 1e-9 * factor, seed)]


def check_round_trip(seed: int = 103, n: int = 1000, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    s, lam = random_spd(rng, n), random_spd(rng, n)
    back, _ = geometry.exp_map_cov(s, geometry.log_map_cov(s, lam))
    err = rel_frobenius_error(back, lam)
    a, b = random_gaussian(rng, n), random_gaussian(rng, n)
    flags = 0
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        _, left = geometry.exp_map_cov(a.cov, frac * geometry.log_map_cov(a.cov, b.cov))
        flags += int(np.sum(left))
    return [
        _result("geometry.exp_log_round_trip", err, 1e-6 * factor, seed),
        CheckResult("geometry.geodesic_left_manifold_flags", flags == 0, float(flags), 0.0, seed),
    ]


def check_compatibility(seed: int = 104, n: int = 1000, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    s, lam = random_spd(rng, n), random_spd(rng, n)
    tn = tangent_norm_squared(s, geometry.log_map_cov(s, lam))
    tt = trace_term(s, lam)
    err = np.abs(tn - tt) / np.maximum(tt, 1e-12)
    a, b = random_gaussian(rng, n), random_gaussian(rng, n)
    mid = Gaussian3(
        0.5 * (a.mean + b.mean),
        geometry.exp_map_cov(a.cov, 0.5 * geometry.log_map_cov(a.cov, b.cov))[0],
    )
    d = w2_distance(a, b)
    bisect = np.maximum(np.abs(w2_distance(a, mid) - d / 2), np.abs(w2_distance(mid, b) - d / 2)) / d
    return [
        _result("geometry.tangent_norm_matches_w2", err, 1e-6 * factor, seed),
        _result("geometry.midpoint_bisects", bisect, 1e-6 * factor, seed),
    ]


def check_sylvester(seed: int = 105, n: int = 1000, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    s, d = random_spd(rng, n), random_symmetric(rng, n)
    g = solve_sylvester(s, d)
    ref = solve_sylvester_kron(s, d)
    oracle = rel_frobenius_error(g, ref)
    resid = rel_frobenius_error(g @ s + s @ g, d, 1e-12)
    asym = np.max(np.abs(g - np.swapaxes(g, -1, -2)), axis=(-2, -1))
    return [
        _result("sylvester.matches_kronecker", oracle, 1e-9 * factor, seed),
        _result("sylvester.residual", resid, 1e-9 * factor, seed),
        _result("sylvester.symmetry", asym, 1e-12 * factor, seed),
    ]


def check_simulation(seed: int = 0, n: int = 100, factor: float = 1.0) -> list[CheckResult]:
    """Filtered vs. observation-only runs of the default preset, one per seed."""
    base = PRESETS["default"]
    reductions, aepe_wins, smooth_wins = [], 0, 0
    for s in range(seed, seed + n):
        runs = run_modes(with_seed(base, s))
        f, o = runs["filtered"].metrics, runs["obs_only"].metrics
        reductions.append(1.0 - f.aepe_2d / o.aepe_2d)
        aepe_wins += f.aepe_2d < o.aepe_2d
        smooth_wins += f.wr_loss <= o.wr_loss and f.temporal_roughness <= o.temporal_roughness
    need = math.ceil(0.95 * n)
    median = float(np.median(reductions))
    return [
        CheckResult(
            "sim.filtered_aepe_wins",
            aepe_wins >= need,
            float(aepe_wins),
            float(need),
            seed,
            f"{aepe_wins}/{n} seeds with lower filtered AEPE",
        ),
        CheckResult(
            "sim.median_aepe_reduction",
            median >= 0.20,
            median,
            0.20,
            seed,
            "observed is the median relative AEPE reduction; tolerance is the required minimum",
        ),
        CheckResult(
            "sim.flicker_reduction",
            smooth_wins >= need,
            float(smooth_wins),
            float(need),
            seed,
            f"{smooth_wins}/{n} seeds with wr_loss and roughness not above observations",
        ),
    ]


def check_gating(seed: int = 106, factor: float = 1.0) -> list[CheckResult]:
    cfg = FilterConfig()
    base = Gaussian3(np.zeros(3), np.eye(3))
    failures = []

    # revert fires just above revert_threshold * sigma_scale and not at it
    for offset, want in ((3.0, Status.ENGAGED), (3.0 + 1e-9, Status.REVERTED)):
        track = TrackState()
        for _ in range(2):
            track, _ = step(track, base, cfg)
        track, out = step(track, Gaussian3(np.array([offset, 0.0, 0.0]), np.eye(3)), cfg)
        if track.status is not want:
            failures.append(f"offset {offset}: status {track.status.name}")

    # an outlier reverts, clean frames then re-enter warmup and re-engage
    track = TrackState()
    statuses = []
    for t in range(10):
        obs = Gaussian3(np.array([10.0, 0.0, 0.0]) if t == 3 else np.zeros(3), np.eye(3))
        track, _ = step(track, obs, cfg)
        statuses.append(track.status)
    expected = [Status.WARMUP, Status.ENGAGED, Status.ENGAGED, Status.REVERTED, Status.REVERTED,
                Status.REVERTED, Status.WARMUP, Status.ENGAGED, Status.ENGAGED, Status.ENGAGED]
    if statuses != expected:
        failures.append("outlier sequence: " + ",".join(s.name for s in statuses))

    pred = Gaussian3(np.zeros(3), np.eye(3))
    for dist, want in ((0.0, 0), (0.05, 0), (1.0, 1), (5.0, 2)):
        got = gate(pred, Gaussian3(np.array([dist, 0.0, 0.0]), np.eye(3)), cfg)
        if int(got) != want:
            failures.append(f"gate at {dist}: {got.name}")
    return [
        CheckResult("filter.gating_state_machine", not failures, float(len(failures)), 0.0, seed,
                    "; ".join(failures)),
        check_transition_table(seed),
    ]


def check_transition_table(seed: int = 106, length: int = 6) -> CheckResult:
    """Drive every offset pattern of ``length`` frames and compare each step
    with the transition table; every table entry must be visited."""
    offsets = np.array([0.0, 0.05, 1.0, 10.0])
    patterns = np.array(list(itertools.product(range(len(offsets)), repeat=length)))
    n = len(patterns)
    bank = _Bank.empty(n)
    cov = np.tile(np.eye(3), (n, 1, 1))
    seen, failures = set(), 0
    for t in range(length):
        mean = np.zeros((n, 3))
        mean[:, 0] = offsets[patterns[:, t]]
        obs = Gaussian3(mean, cov)
        status, n_hist, div = bank.status.copy(), bank.n_hist.copy(), bank.divergence.copy()
        out, log = _step_bank(bank, obs, FilterConfig())
        for key in set(zip(status.tolist(), log.decision.tolist())):
            s, d = key
            tr_key = (Status(s), None if d < 0 else Decision(d))
            mask = (status == s) & (log.decision == d)
            if tr_key not in TRANSITIONS:
                failures += int(mask.sum())
                continue
            seen.add(tr_key)
            tr = TRANSITIONS[tr_key]
            want = np.full(n, int(tr.status))
            if tr.status is Status.WARMUP:
                want = np.where(bank.n_hist >= 2, int(Status.ENGAGED), want)
            want_hist = np.ones(n) if tr.history is History.RESET else np.minimum(n_hist + 1, 2)
            want_div = {"keep": div, "reset": np.zeros(n), "increment": div + 1}[tr.divergence]
            passthrough = np.all(out.mean == mean, axis=-1)
            bad = (
                (bank.status != want)
                | (bank.n_hist != want_hist)
                | (bank.divergence != want_div)
                # a merge may legitimately reproduce the observation, so only
                # pass-through rows are checked
                | ((tr.output is Output.OBSERVATION) & ~passthrough)
            )
            failures += int(np.sum(bad & mask))
    missing = set(TRANSITIONS) - seen
    detail = f"{n} patterns x {length} frames; unvisited entries: {sorted(str(k) for k in missing) or 'none'}"
    ok = failures == 0 and not missing
    return CheckResult("filter.transition_table", ok, float(failures + len(missing)), 0.0, seed, detail)


def check_losses(seed: int = 107, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    errs = [abs(total_loss(1.0, 4.0, 10.0, LossWeights()) - 1.5)]
    for _ in range(100):
        r, s, w = rng.uniform(0, 10, size=3)
        ws, ww = rng.uniform(0, 1, size=2)
        errs.append(abs(total_loss(r, s, w, LossWeights(ws, ww)) - (r + ws * s + ww * w)))
    a = Gaussian3(np.zeros(3), np.eye(3))
    b = Gaussian3(np.array([1.0, 0.0, 0.0]), 4 * np.eye(3))
    errs.append(abs(linear_soa_loss(a, b) - 28.0))
    for _ in range(100):
        x, y = random_gaussian(rng), random_gaussian(rng)
        oracle = sum((x.mean[i] - y.mean[i]) ** 2 for i in range(3)) + sum(
            (x.cov[i, j] - y.cov[i, j]) ** 2 for i in range(3) for j in range(3)
        )
        errs.append(abs(linear_soa_loss(x, y) - oracle) / max(oracle, 1.0))
        errs.append(abs(linear_wr_loss([[x], [y], [x]]) - 2 * oracle) / max(oracle, 1.0))
    return [_result("losses.arithmetic", errs, 1e-12 * factor, seed)]


def check_gradient(seed: int = 108, n: int = 100, factor: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n):
        rot = random_rotation(rng)
        scale = np.sqrt(random_eigenvalues(rng, cond_max=1e2, min_gap=0.1))
        mean = rng.standard_normal(3)
        a = Gaussian3(mean, (rot * scale**2) @ rot.T)
        b = random_gaussian(rng, cond_max=1e2)
        direction = (rng.standard_normal(3), rng.standard_normal(3), 0.1 * scale * rng.standard_normal(3))
        analytic = w2_directional_derivative(a, b, direction[0], parameter_tangent(rot, scale, *direction[1:]))
        fd = central_difference((mean, rot, scale), b, direction)
        errs.append(abs(analytic - fd) / max(abs(analytic), 1e-8))
    return [_result("losses.fd_gradient", errs, 1e-4 * factor, seed)]


CHECKS: dict[str, Callable[..., list[CheckResult]]] = {
    "metric_axioms": check_metric_axioms,
    "decomposition": check_decomposition,
    "round_trip": check_round_trip,
    "compatibility": check_compatibility,
    "sylvester": check_sylvester,
    "simulation": check_simulation,
    "gating": check_gating,
    "losses": check_losses,
    "gradient": check_gradient,
}

# statistical outcomes are not scaled by the tolerance profile
_UNSCALED = {"simulation", "gating"}


# -- fault injection --------------------------------------------------------------


def _flipped_log(original):
    def log_map_cov(base, target, eps=geometry.EPS_PD):
        return -original(base, target, eps)

    return log_map_cov


FAULTS = {"log-sign-flip": ("log_map_cov", _flipped_log)}


@contextlib.contextmanager
def inject_fault(name: str | None) -> Iterator[None]:
    """Temporarily break a geometry routine to confirm the suite notices."""
    if name is None:
        yield
        return
    attr, make = FAULTS[name]
    original = getattr(geometry, attr)
    setattr(geometry, attr, make(original))
    try:
        yield
    finally:
        setattr(geometry, attr, original)


def run(profile: str = "default", only: list[str] | None = None, fault: str | None = None) -> Report:
    if profile not in PROFILES:
        raise ValueError(f"unknown tolerance profile {profile!r}")
    report = Report(profile)
    with inject_fault(fault):
        for key, fn in CHECKS.items():
            if only and key not in only:
                continue
            factor = 1.0 if key in _UNSCALED else PROFILES[profile]
            with np.errstate(all="ignore"):
                try:
                    results = fn(factor=factor)
                except Exception as exc:  # a crash is a failed property, not a crashed suite
                    results = [CheckResult(key, False, math.inf, 0.0, -1, f"{type(exc).__name__}: {exc}")]
            for r in results:
                if not math.isfinite(r.observed):
                    r.detail = (r.detail + f" observed={r.observed}").strip()
                    r.observed = 1e308
            report.checks.extend(results)
    return report
