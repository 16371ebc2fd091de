"""Command-line entry point: ``bures-flow {distance,track,selftest}``.

Exit codes: 0 success, 1 property failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import selftest
from .filter import FilterConfig
from .gaussian import from_atom
from .io import (
    FLOW_COLUMNS,
    METRICS_COLUMNS,
    ConfigError,
    config_from_json,
    csv_text,
    flow_rows,
    load_scene,
    metrics_row,
    scene_to_json,
)
from .metric import mean_term, trace_term, w2_squared
from .sim import MODES, PRESETS, PinholeCamera, ScenarioConfig, project_flow, run_modes, with_seed
from .spd_linalg import InvalidInputError

MODE_FLAGS = {"obs": ("obs_only",), "filtered": ("filtered",), "both": MODES}


class UsageError(Exception):
    pass


def _worker_count() -> int:
    raw = os.environ.get("BURES_FLOW_THREADS")
    cpus = os.cpu_count() or 1
    if raw is None:
        return cpus
    try:
        return max(1, min(int(raw), cpus))
    except ValueError:
        raise UsageError(f"BURES_FLOW_THREADS must be an integer, got {raw!r}") from None


def _parse_seeds(text: str) -> list[int]:
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        else:
            seeds = list(range(int(text)))
    except ValueError:
        raise UsageError(f"--seeds expects a count or a comma list, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds selects no seeds")
    return sorted(set(seeds))


# -- distance ------------------------------------------------------------------------


def _parse_atom(text: str, flag: str):
    try:
        atom = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{flag}: not valid JSON ({exc})") from None
    if not isinstance(atom, dict):
        raise UsageError(f"{flag}: expected a JSON object with mean/rot/scale")
    try:
        return from_atom(atom)
    except InvalidInputError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _scene_pick(frames, sel: str):
    try:
        t, i = (int(x) for x in sel.split(":"))
        return frames[t][i]
    except (ValueError, IndexError):
        raise UsageError(f"--at {sel!r}: expected FRAME:INDEX inside the scene") from None


def cmd_distance(args) -> int:
    if args.scene:
        if len(args.at or []) != 2:
            raise UsageError("--scene needs exactly two --at FRAME:INDEX selections")
        path = Path(args.scene)
        if not path.is_file():
            raise UsageError(f"scene file not found: {path}")
        try:
            frames = load_scene(path)
        except (ConfigError, InvalidInputError, json.JSONDecodeError) as exc:
            raise UsageError(f"{path}: {exc}") from None
        a, b = (_scene_pick(frames, s) for s in args.at)
    else:
        if args.a is None or args.b is None:
            raise UsageError("give --a and --b atoms, or --scene with two --at selections")
        a, b = _parse_atom(args.a, "--a"), _parse_atom(args.b, "--b")
    sq = w2_squared(a, b)
    out = {
        "w2": sq**0.5,
        "w2_sq": sq,
        "mean_term": float(mean_term(a, b)),
        "trace_term": float(trace_term(a.cov, b.cov)),
    }
    print(json.dumps(out, sort_keys=True))
    return 0


# -- track ---------------------------------------------------------------------------


def _one_seed(job):
    name, cfg, filter_cfg, modes, seed = job
    runs = run_modes(with_seed(cfg, seed), filter_cfg, modes)
    camera = PinholeCamera.look_at()
    out = {}
    for mode, r in runs.items():
        out[mode] = {
            "row": metrics_row(name, mode, seed, r.metrics),
            "scene": scene_to_json(r.estimates, {"scenario": name, "mode": mode, "seed": seed}),
            "flow": csv_text(FLOW_COLUMNS, flow_rows(project_flow(camera, r.estimates))),
            "status": r.status_log.to_csv() if r.status_log is not None else None,
        }
    return seed, out


def _load_scenario(args) -> tuple[str, ScenarioConfig]:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            return config_from_json(path.read_text())
        except ConfigError as exc:
            raise UsageError(f"{path}: {exc}") from None
    name = args.preset or "default"
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return name, PRESETS[name]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_track(args) -> int:
    name, cfg = _load_scenario(args)
    seeds = _parse_seeds(args.seeds)
    modes = MODE_FLAGS[args.mode]
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out_dir} is not writable: {exc}") from None

    jobs = [(name, cfg, FilterConfig(), modes, s) for s in seeds]
    workers = min(_worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_one_seed, jobs))
    else:
        results = dict(map(_one_seed, jobs))

    rows = []
    for mode in sorted(modes):
        for seed in seeds:
            res = results[seed][mode]
            rows.append(res["row"])
            _write(out_dir / "estimates" / f"{name}_{mode}_seed{seed}.json", res["scene"])
            _write(out_dir / "flow" / f"{name}_{mode}_seed{seed}.csv", res["flow"])
            if res["status"] is not None:
                _write(out_dir / "status" / f"{name}_seed{seed}.csv", res["status"])
    _write(out_dir / "metrics.csv", csv_text(METRICS_COLUMNS, rows))

    print(f"scenario {name}: {len(seeds)} seed(s), modes {', '.join(sorted(modes))}")
    print(f"{'mode':<10}{'mean_rmse':>14}{'w2_rmse':>14}{'roughness':>14}{'aepe_2d':>14}")
    for mode in sorted(modes):
        sel = [r for r in rows if r[1] == mode]
        means = [sum(r[k] for r in sel) / len(sel) for k in range(3, 7)]
        print(f"{mode:<10}" + "".join(f"{m:>14.6g}" for m in means))
    return 0


# -- selftest ------------------------------------------------------------------------


def cmd_selftest(args) -> int:
    only = args.only.split(",") if args.only else None
    if only:
        unknown = sorted(set(only) - set(selftest.CHECKS))
        if unknown:
            raise UsageError(f"unknown check(s): {', '.join(unknown)}")
    report = selftest.run(args.tolerance, only, args.inject_fault)
    for c in report.checks:
        mark = "PASS" if c.passed else "FAIL"
        line = f"{mark}  {c.name:<40} observed={c.observed:.3g} tol={c.tolerance:.3g} seed={c.seed}"
        if not c.passed and c.detail:
            line += f"  ({c.detail})"
        print(line)
    if args.json_report:
        _write(Path(args.json_report), report.to_json())
    failed = [c.name for c in report.checks if not c.passed]
    print(f"{len(report.checks) - len(failed)}/{len(report.checks)} properties passed")
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bures-flow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distance", help="W2 distance between two Gaussians")
    d.add_argument("--a", help='Gaussian atom, e.g. \'{"mean":[0,0,0],"rot":[1,0,0,0],"scale":[1,1,1]}\'')
    d.add_argument("--b", help="second Gaussian atom")
    d.add_argument("--scene", help="scene JSON file to pick Gaussians from")
    d.add_argument("--at", action="append", metavar="FRAME:INDEX", help="selection inside --scene (twice)")
    d.set_defaults(func=cmd_distance)

    t = sub.add_parser("track", help="run filter experiments and write CSV/JSON outputs")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", metavar="PATH")
    t.add_argument("--out", required=True, metavar="DIR")
    t.add_argument("--mode", choices=sorted(MODE_FLAGS), default="both")
    t.add_argument("--seeds", default="1", help="seed count N (0..N-1) or comma list")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("selftest", help="run the numerical property suite")
    s.add_argument("--tolerance", choices=sorted(selftest.PROFILES), default="default")
    s.add_argument("--json-report", metavar="PATH")
    s.add_argument("--only", help="comma list of checks: " + ",".join(selftest.CHECKS))
    s.add_argument("--inject-fault", choices=sorted(selftest.FAULTS), help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bures-flow: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
