"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line; the lines are printed together in the
terminal summary (see ``conftest.py``). Run directly with
``python3 tests/test_acceptance.py`` for the same report.
"""

import contextlib
import io
import sys
import time

import pytest

from bures_flow import cli, selftest
from bures_flow.filter import FilterConfig

RESULTS: dict[int, str] = {}


def record(number: int, title: str, checks, extra: str = "", ok: bool | None = None):
    ok = all(c.passed for c in checks) if ok is None else ok
    parts = [f"{c.name}={c.observed:.3g} (tol {c.tolerance:.3g})" for c in checks]
    if extra:
        parts.append(extra)
    RESULTS[number] = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}: " + "; ".join(parts)
    return ok


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def simulation():
    return timed(selftest.check_simulation, n=100)


def test_criterion_01_metric_axioms():
    checks, elapsed = timed(selftest.check_metric_axioms, n=1000)
    ok = all(c.passed for c in checks) and elapsed < 5.0
    assert record(1, "metric axioms on 1000 samples in < 5 s", checks, f"runtime {elapsed:.2f}s", ok)


def test_criterion_02_decomposition_consistency():
    checks = selftest.check_decomposition(n=1000)
    assert record(2, "decomposed trace term equals full-matrix trace term", checks)


def test_criterion_03_round_trip():
    checks = selftest.check_round_trip(n=1000)
    assert record(3, "exp(log) round trip and no geodesic left-manifold flags", checks)


def test_criterion_04_metric_geometry_compatibility():
    checks = selftest.check_compatibility(n=1000)
    assert record(4, "tangent norm matches W2^2 and midpoints bisect", checks)


def test_criterion_05_sylvester():
    checks = [c for c in selftest.check_sylvester(n=1000) if c.name != "sylvester.symmetry"]
    assert record(5, "eigenbasis Sylvester matches Kronecker oracle, residual bounded", checks)


def test_criterion_06_filter_improves_aepe(simulation):
    checks, elapsed = simulation
    used = [c for c in checks if c.name in ("sim.filtered_aepe_wins", "sim.median_aepe_reduction")]
    ok = all(c.passed for c in used) and elapsed < 60.0
    assert record(6, "filtered AEPE beats observations in >= 95/100 seeds, median reduction >= 20%",
                  used, f"runtime {elapsed:.1f}s (shared with criterion 7)", ok)


def test_criterion_07_flicker_reduction(simulation):
    checks, _ = simulation
    used = [c for c in checks if c.name == "sim.flicker_reduction"]
    assert record(7, "wr_loss and roughness not above observations in >= 95/100 seeds", used)


def test_criterion_08_gating_state_machine():
    cfg = FilterConfig()
    defaults = cfg.engage_threshold == 0.1 and cfg.revert_threshold == 3.0
    checks = selftest.check_gating()
    ok = all(c.passed for c in checks) and defaults
    assert record(8, "revert above 3 sigma, re-engage after warmup, full transition table", checks,
                  f"default thresholds (0.1, 3.0): {defaults}", ok)


def test_criterion_09_loss_arithmetic():
    checks = selftest.check_losses()
    assert record(9, "total loss and linear baselines match hand-computed values", checks)


def test_criterion_10_gradient_check():
    checks = selftest.check_gradient(n=100)
    assert record(10, "finite differences match analytic W2^2 derivative on 100 configurations", checks)


def test_criterion_11_selftest_wall_time():
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code, elapsed = timed(cli.main, ["selftest"])
    lines = [ln for ln in buf.getvalue().splitlines() if ln.startswith(("PASS", "FAIL"))]
    # timing criterion only; property outcomes are judged by criteria 1-10
    ok = elapsed < 120.0 and len(lines) == 18
    RESULTS[11] = (f"{'PASS' if ok else 'FAIL'}  criterion 11: full selftest in < 120 s: "
                   f"runtime {elapsed:.1f}s, {len(lines)} properties run, exit code {code}")
    assert ok


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
