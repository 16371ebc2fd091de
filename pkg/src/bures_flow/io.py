"""Scene JSON, scenario configs, and CSV writers."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .gaussian import Gaussian3, frame_from_atoms, frame_to_atoms
from .sim import PRESETS, Flow, MetricsReport, ScenarioConfig

CONFIG_SCHEMA = "bures-flow/scenario/1"
SCENE_SCHEMA = "bures-flow/scene/1"

METRICS_COLUMNS = ("scenario", "mode", "seed", "mean_rmse", "w2_rmse", "temporal_roughness", "aepe_2d")
FLOW_COLUMNS = ("frame", "index", "u", "v", "valid")


class ConfigError(ValueError):
    pass


def scene_to_json(frames: Sequence[Gaussian3], meta: dict | None = None) -> str:
    doc = {
        "frames": [frame_to_atoms(f) for f in frames],
        "meta": {"schema": SCENE_SCHEMA, **(meta or {})},
    }
    return json.dumps(doc, indent=None, separators=(",", ":"), sort_keys=True) + "\n"


def scene_from_json(text: str) -> list[Gaussian3]:
    doc = json.loads(text)
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ConfigError("scene file needs a top-level 'frames' list")
    return [frame_from_atoms(frame) for frame in doc["frames"]]


def load_scene(path: str | Path) -> list[Gaussian3]:
    return scene_from_json(Path(path).read_text())


def config_to_json(cfg: ScenarioConfig, name: str = "custom") -> str:
    doc = {"schema": CONFIG_SCHEMA, "name": name, "scenario": cfg.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def config_from_json(text: str) -> tuple[str, ScenarioConfig]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"config field 'schema' must be {CONFIG_SCHEMA!r}, got {doc.get('schema')!r}")
    if "scenario" not in doc:
        raise ConfigError("config is missing field 'scenario'")
    base = doc.get("preset")
    if base is not None and base not in PRESETS:
        raise ConfigError(f"unknown preset {base!r}")
    scenario = doc["scenario"]
    if not isinstance(scenario, dict):
        raise ConfigError("config field 'scenario' must be an object")
    merged = PRESETS[base].to_dict() if base else {}
    # a partial noise block overrides only the fields it names
    noise = {**merged.get("noise", {}), **scenario.get("noise", {})}
    merged.update(scenario)
    if noise:
        merged["noise"] = noise
    try:
        cfg = ScenarioConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field 'scenario': {exc}") from None
    return str(doc.get("name", base or "custom")), cfg


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header: Iterable[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def metrics_row(scenario: str, mode: str, seed: int, m: MetricsReport) -> tuple:
    return (scenario, mode, seed, m.mean_rmse, m.w2_rmse, m.temporal_roughness, m.aepe_2d)


def flow_rows(flow: Flow):
    for t in range(flow.uv.shape[0]):
        for i in range(flow.uv.shape[1]):
            u, v = flow.uv[t, i]
            # frame t+1 is the end point of the displacement
            yield (t + 1, i, float(u), float(v), int(flow.valid[t, i]))
