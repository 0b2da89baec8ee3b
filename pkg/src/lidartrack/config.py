"""Dataclass configuration for every pipeline stage.

Defaults reproduce the published setup, so an empty config file is a valid
run. The on-disk format is INI: one section per stage, one key per field.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints


class ConfigError(ValueError):
    """Raised with one line per offending ``section.key``."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


@dataclass
class ProjectionConfig:
    azimuth_fov_deg: float = 40.5
    azimuth_res_deg: float = 0.18
    top_elevation_deg: float = 2.0
    upper_rows: int = 32
    upper_res_deg: float = 1.0 / 3.0
    lower_rows: int = 32
    lower_res_deg: float = 0.5

    @property
    def height(self) -> int:
        return self.upper_rows + self.lower_rows

    @property
    def width(self) -> int:
        # 81.0 / 0.18 is not exactly 450 in binary floating point
        return int(math.floor(2 * self.azimuth_fov_deg / self.azimuth_res_deg + 1e-9)) + 1


@dataclass
class LossConfig:
    vehicle_weight: float = 25.0
    resolution_weights: tuple[float, float, float] = (1.0, 0.7, 0.5)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 2000
    batch_size: int = 4
    lr_halve_at: float = 0.75
    flip_prob: float = 0.5
    bn_momentum: float = 0.1


@dataclass
class GroundConfig:
    iterations: int = 500
    tolerance: float = 0.2
    max_tilt_deg: float = 15.0
    min_inlier_fraction: float = 0.1


@dataclass
class ClusterConfig:
    score_threshold: float = 0.5
    max_dist: float = 1.0
    min_points: int = 25
    oracle_min_points: int = 4
    min_radius: float = 0.5
    sweep_step_deg: float = 1.0
    noise_gain: float = 100.0


@dataclass
class TrackerConfig:
    max_hypotheses: int = 2
    prune_threshold: float = 0.001
    init_sigmas: tuple[float, float, float, float, float] = (2.0, 2.0, math.pi / 2, 20.0, 0.2)
    process_sigmas: tuple[float, float] = (0.5, 0.01)
    position_sigmas: tuple[float, float] = (0.9, 0.9)
    orientation_scale: float = math.pi / 2
    c_min: float = 0.05
    angle_period: float = math.pi / 2
    gate: float = 9.21
    max_misses: int = 5
    min_hits: int = 2
    dims_alpha: float = 0.3
    prior_dims: tuple[float, float] = (1.8, 4.4)  # width, length of a typical car


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    mostly_tracked: float = 0.8
    mostly_lost: float = 0.2
    include_trucks: bool = True


@dataclass
class PipelineConfig:
    root: str = "."
    detector: str = "oracle"
    checkpoint: str = ""
    seed: int = 0
    sensor_mount: tuple[float, float, float] = (0.0, 0.0, 0.0)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ground: GroundConfig = field(default_factory=GroundConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def min_points(self) -> int:
        if self.detector == "oracle":
            return self.cluster.oracle_min_points
        return self.cluster.min_points


DETECTORS = ("geometric", "net", "oracle")
SECTIONS = ("projection", "loss", "train", "ground", "cluster", "tracker", "evaluation")

# fields that must be strictly positive (per section, "*" = every numeric field)
_POSITIVE = {
    "projection": "*",
    "loss": "*",
    "ground": ("iterations", "tolerance", "max_tilt_deg"),
    "cluster": ("max_dist", "sweep_step_deg", "noise_gain"),
    "tracker": ("max_hypotheses", "prune_threshold", "init_sigmas", "process_sigmas",
                "position_sigmas", "orientation_scale", "c_min", "angle_period", "gate",
                "max_misses", "dims_alpha", "prior_dims"),
    "train": ("lr", "adam_eps", "batch_size"),
    "evaluation": ("iou_threshold",),
}


def _convert(raw: str, typ: Any):
    origin = get_origin(typ)
    if origin is tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        args = get_args(typ)
        if len(parts) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values, got {len(parts)}")
        return tuple(_convert(p, a) for p, a in zip(parts, args))
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        val = float(raw)
        if not math.isfinite(val):
            raise ValueError("must be finite")
        return val
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _check_positive(section: str, obj, errors: list[str]):
    wanted = _POSITIVE.get(section, ())
    for f in dataclasses.fields(obj):
        if wanted != "*" and f.name not in wanted:
            continue
        value = getattr(obj, f.name)
        values = value if isinstance(value, tuple) else (value,)
        if any(isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0 for v in values):
            errors.append(f"{section}.{f.name}: must be > 0, got {_format(value)}")


def validate(cfg: PipelineConfig) -> PipelineConfig:
    errors = []
    if cfg.detector not in DETECTORS:
        errors.append(f"pipeline.detector: must be one of {DETECTORS}, got {cfg.detector!r}")
    for section in SECTIONS:
        _check_positive(section, getattr(cfg, section), errors)
    c = cfg.cluster
    if not 0.0 <= c.score_threshold <= 1.0:
        errors.append("cluster.score_threshold: must lie in [0, 1]")
    if c.min_points < 1 or c.oracle_min_points < 1:
        errors.append("cluster.min_points: must be >= 1")
    if not 0.0 < cfg.train.lr_halve_at <= 1.0:
        errors.append("train.lr_halve_at: must lie in (0, 1]")
    if not 0.0 <= cfg.train.flip_prob <= 1.0:
        errors.append("train.flip_prob: must lie in [0, 1]")
    e = cfg.evaluation
    if not 0.0 <= e.mostly_lost <= e.mostly_tracked <= 1.0:
        errors.append("evaluation.mostly_tracked: need 0 <= mostly_lost <= mostly_tracked <= 1")
    if errors:
        raise ConfigError(errors)
    return cfg


def _fill(obj, section: str, items: dict[str, str], errors: list[str]):
    hints = get_type_hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj) if not dataclasses.is_dataclass(hints[f.name])}
    for key, raw in items.items():
        if key not in names:
            errors.append(f"{section}.{key}: unknown key")
            continue
        try:
            setattr(obj, key, _convert(raw, hints[key]))
        except ValueError as exc:
            errors.append(f"{section}.{key}: {exc}")


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    cfg = PipelineConfig()
    errors: list[str] = []
    for name in parser.sections():
        items = dict(parser.items(name))
        if name == "pipeline":
            _fill(cfg, name, items, errors)
        elif name in SECTIONS:
            _fill(getattr(cfg, name), name, items, errors)
        else:
            errors.append(f"{name}: unknown section")
    if errors:
        raise ConfigError(errors)
    return validate(cfg)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return parse_config(Path(path).read_text())


def dump_config(cfg: PipelineConfig) -> str:
    lines = ["[pipeline]"]
    for f in dataclasses.fields(cfg):
        if f.name not in SECTIONS:
            lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    for section in SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            lines.append(f"{f.name} = {_format(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"
