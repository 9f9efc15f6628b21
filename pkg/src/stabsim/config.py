"""Run configuration: a versioned JSON schema with fail-fast validation.

Unknown fields are rejected (typos must not silently fall back to defaults)
and every error names the offending field by its dotted path.  Omitted
fields take the documented defaults, so a minimal config is just
``{"version": 1}``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields as dataclass_fields

from .engine import EfferentConfig, EngineConfig
from .scene import SceneConfig

__all__ = [
    "ConfigError",
    "TraceSpec",
    "RunConfig",
    "SCHEMA_VERSION",
    "default_config",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "save_config",
    "DEFAULT_GAIN_GRID",
]

SCHEMA_VERSION = 1

# Desk-scale default sweep grid.
DEFAULT_GAIN_GRID = (-2.0, -1.5, -1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 0.9, 1.1, 1.25, 1.5, 2.0)

TRACE_GENERATED = "generated"
TRACE_FILE = "file"


class ConfigError(ValueError):
    """Configuration rejected; the message carries the dotted field path."""


@dataclass(frozen=True)
class TraceSpec:
    """Where the eye trace for each run cell comes from."""

    kind: str = TRACE_GENERATED
    seed: int = 0
    diffusion: float = 5.0
    duration: float = 1.0
    rate: float = 1000.0
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in (TRACE_GENERATED, TRACE_FILE):
            raise ValueError(f"trace kind must be 'generated' or 'file', got {self.kind!r}")
        if self.kind == TRACE_FILE and not self.path:
            raise ValueError("trace kind 'file' requires a path")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    trace: TraceSpec = field(default_factory=TraceSpec)
    gains: tuple[float, ...] = DEFAULT_GAIN_GRID
    repeats: int = 5
    master_seed: int = 0
    output_dir: str = "out"
    snapshot_every: int = 0  # canvas PGM cadence for single-condition runs; 0 disables
    plots: bool = False

    def __post_init__(self) -> None:
        if not self.gains:
            raise ValueError("gains must be a non-empty list")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")


def default_config(**overrides) -> RunConfig:
    """The desk-scale preset: 128x128 arrays, radius-20 search, 1 s traces, 5 repeats."""
    return RunConfig(**overrides)


# ---------------------------------------------------------------------------
# Strict dict <-> dataclass conversion
# ---------------------------------------------------------------------------

_BOOL, _INT, _NUM, _STR = "bool", "int", "number", "string"


def _check_scalar(value, kind: str, path: str):
    if kind == _BOOL:
        if isinstance(value, bool):
            return value
    elif kind == _INT:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind == _NUM:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind == _STR:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{path}: expected {kind}, got {type(value).__name__}")


_SCENE_FIELDS = {
    "background_mode": _STR,
    "background_texture_seed": _INT,
    "stimulus_center": "point_or_null",
    "stimulus_radius": _NUM,
    "display_rate": _NUM,
    "array_width": _INT,
    "array_height": _INT,
    "element_pitch": _NUM,
    "background_amplitude": _NUM,
    "background_fill": _NUM,
    "annulus_inner_radius": _NUM,
    "cross_arm": _NUM,
    "world_margin": _INT,
}

_ENGINE_FIELDS = {
    "search_radius": _INT,
    "latency_steps": _INT,
    "sector_half_angle": _NUM,
    "efferent": "efferent_or_null",
    "background_energy_threshold": _NUM,
    "step_rate": _NUM,
    "separation_threshold": _NUM,
    "weight_r_half": "number_or_null",
    "min_override_magnitude": _NUM,
    "override_persistence": _INT,
    "track_window": _INT,
    "full_primary_search": _BOOL,
    "score_jitter_sd": _NUM,
    "matcher_backend": _STR,
}

_EFFERENT_FIELDS = {"noise_sd": _NUM, "quantization": _NUM}

_TRACE_FIELDS = {
    "kind": _STR,
    "seed": _INT,
    "diffusion": _NUM,
    "duration": _NUM,
    "rate": _NUM,
    "path": "string_or_null",
}

_TOP_FIELDS = {
    "version": _INT,
    "scene": "section",
    "engine": "section",
    "trace": "section",
    "gains": "gains",
    "repeats": _INT,
    "master_seed": _INT,
    "output_dir": _STR,
    "snapshot_every": _INT,
    "plots": _BOOL,
}


def _parse_section(data, schema: dict, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    out = {}
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown field")
        kind = schema[key]
        sub = f"{path}.{key}"
        if kind == "point_or_null":
            if value is None:
                out[key] = None
            elif isinstance(value, list) and len(value) == 2:
                out[key] = (
                    _check_scalar(value[0], _NUM, sub + "[0]"),
                    _check_scalar(value[1], _NUM, sub + "[1]"),
                )
            else:
                raise ConfigError(f"{sub}: expected null or [x, y]")
        elif kind == "number_or_null":
            out[key] = None if value is None else _check_scalar(value, _NUM, sub)
        elif kind == "string_or_null":
            out[key] = None if value is None else _check_scalar(value, _STR, sub)
        elif kind == "efferent_or_null":
            if value is None:
                out[key] = None
            else:
                eff = _parse_section(value, _EFFERENT_FIELDS, sub)
                out[key] = _build(EfferentConfig, eff, sub)
        else:
            out[key] = _check_scalar(value, kind, sub)
    return out


def _build(cls, kwargs: dict, path: str):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a top-level object")
    unknown = set(data) - set(_TOP_FIELDS)
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown field")
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.version: expected {SCHEMA_VERSION}, got {version!r}")

    scene = _build(SceneConfig, _parse_section(data.get("scene", {}), _SCENE_FIELDS, "config.scene"), "config.scene")
    engine = _build(
        EngineConfig, _parse_section(data.get("engine", {}), _ENGINE_FIELDS, "config.engine"), "config.engine"
    )
    trace = _build(TraceSpec, _parse_section(data.get("trace", {}), _TRACE_FIELDS, "config.trace"), "config.trace")

    gains_raw = data.get("gains", list(DEFAULT_GAIN_GRID))
    if not isinstance(gains_raw, list) or not gains_raw:
        raise ConfigError("config.gains: expected a non-empty list of numbers")
    gains = tuple(_check_scalar(g, _NUM, f"config.gains[{i}]") for i, g in enumerate(gains_raw))

    top = {}
    for key in ("repeats", "master_seed", "output_dir", "snapshot_every", "plots"):
        if key in data:
            top[key] = _check_scalar(data[key], _TOP_FIELDS[key], f"config.{key}")
    return _build(RunConfig, dict(scene=scene, engine=engine, trace=trace, gains=gains, **top), "config")


def config_to_dict(cfg: RunConfig) -> dict:
    """Round-trippable plain dict (given SceneConfig's gain is per-cell, it is omitted)."""
    scene = asdict(cfg.scene)
    scene.pop("gain")
    scene["stimulus_center"] = list(cfg.scene.stimulus_center) if cfg.scene.stimulus_center else None
    engine = asdict(cfg.engine)
    trace = asdict(cfg.trace)
    return {
        "version": SCHEMA_VERSION,
        "scene": scene,
        "engine": engine,
        "trace": trace,
        "gains": list(cfg.gains),
        "repeats": cfg.repeats,
        "master_seed": cfg.master_seed,
        "output_dir": cfg.output_dir,
        "snapshot_every": cfg.snapshot_every,
        "plots": cfg.plots,
    }


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
