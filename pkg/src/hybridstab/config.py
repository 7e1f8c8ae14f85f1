"""Experiment configuration: YAML in, frozen dataclasses out.

Every section maps onto one dataclass and unknown keys are rejected at every
level, so a typo fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .control import ControlConfig, Gains
from .gait import GaitConfig
from .plant import PlantParams, ScenarioSpec
from .ppo import TrainConfig
from .symmetry import MirrorSpec

RATIOS = (Fraction(0), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(1))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalSettings:
    """Protocol sizes for evaluation, learning curves and the sweeps."""

    episodes: int = 100
    n_envs: int = 16
    window: int = 100  # rolling window (episodes) of the training curve
    curve_interval: int = 8  # batches between deterministic learning-curve evaluations
    curve_episodes: int = 16
    checkpoint_interval: int = 50  # batches between periodic checkpoints
    radial_directions: int = 24
    radial_trials: int = 10
    radial_threshold: float = 0.5
    radial_force_max: float = 3000.0
    radial_resolution: float = 10.0
    radial_push_window: tuple = (2.0, 2.5)  # push start drawn uniformly in this window, s
    radial_settle: float = 3.0  # survival time required after the push, s
    drift_duration: float = 500.0
    drift_sample: float = 5.0
    noise_levels: tuple = (1.0, 1.1, 1.2, 1.3, 1.4)
    noise_episodes: int = 50
    noise_push_interval: float = 3.5

    def __post_init__(self):
        for name in ("episodes", "n_envs", "window", "curve_interval", "curve_episodes", "checkpoint_interval",
                     "radial_directions", "radial_trials", "noise_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"eval.{name} must be positive")
        if not 0 < self.radial_threshold <= 1:
            raise ConfigError("eval.radial_threshold must lie in (0, 1]")
        if not 0 < self.radial_resolution < self.radial_force_max:
            raise ConfigError("eval.radial_resolution must lie in (0, radial_force_max)")
        lo, hi = self.radial_push_window
        if not 0 < lo <= hi:
            raise ConfigError("eval.radial_push_window must be positive and ordered")
        if not (self.drift_duration > 0 and 0 < self.drift_sample <= self.drift_duration):
            raise ConfigError("eval.drift_sample must lie in (0, drift_duration]")
        if not self.noise_levels or min(self.noise_levels) < 1.0:
            raise ConfigError("eval.noise_levels must be non-empty and >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    gait: GaitConfig = field(default_factory=GaitConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    mirror: str = "reduced"
    out: str = "runs"
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if self.mirror != "reduced":
            raise ConfigError(f"mirror must be 'reduced' for the reduced plant, got {self.mirror!r}")

    def mirror_spec(self) -> MirrorSpec:
        return MirrorSpec.reduced()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=int(seed)))

    def with_ratio(self, ratio) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, ratio=parse_ratio(ratio)))

    def with_scenario(self, kind: str) -> "ExperimentConfig":
        sc = self.scenario
        return replace(self, scenario=ScenarioSpec.named(kind, train_cap=sc.train_cap, eval_cap=sc.eval_cap))


def parse_ratio(value) -> Fraction:
    try:
        r = Fraction(str(value)) if not isinstance(value, Fraction) else value
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad symmetry ratio {value!r}") from exc
    if r not in RATIOS:
        raise ConfigError(f"symmetry ratio must be one of 0, 1/8, 1/4, 1/2, 1; got {value!r}")
    return r


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _build(cls, data: Optional[Mapping], section: str, **fixed):
    data = {} if data is None else data
    if not isinstance(data, Mapping):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    kwargs = {k: _tupleize(v) for k, v in data.items()}
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


def _scenario(data: Optional[Mapping]) -> ScenarioSpec:
    data = dict(data or {})
    kind = data.pop("kind", "l1")
    known = {f.name for f in fields(ScenarioSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in 'scenario': {', '.join(unknown)}")
    try:
        return ScenarioSpec.named(kind, **{k: _tupleize(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'scenario': {exc}") from exc


def _control(data: Optional[Mapping]) -> ControlConfig:
    data = dict(data or {})
    gains = _build(Gains, data.pop("gains", None), "control.gains")
    return _build(ControlConfig, data, "control", gains=gains)


def _train(data: Optional[Mapping]) -> TrainConfig:
    data = dict(data or {})
    if "ratio" in data:
        data["ratio"] = parse_ratio(data["ratio"])
    if "max_grad_norm" in data and data["max_grad_norm"] is None:
        data["max_grad_norm"] = float("inf")
    return _build(TrainConfig, data, "train")


SECTIONS = ("scenario", "train", "gait", "control", "plant", "mirror", "out", "eval")


def from_dict(data: Optional[Mapping[str, Any]]) -> ExperimentConfig:
    data = {} if data is None else data
    if not isinstance(data, Mapping):
        raise ConfigError("configuration root must be a mapping")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    return ExperimentConfig(
        scenario=_scenario(data.get("scenario")),
        train=_train(data.get("train")),
        gait=_build(GaitConfig, data.get("gait"), "gait"),
        control=_control(data.get("control")),
        plant=_build(PlantParams, data.get("plant"), "plant"),
        mirror=str(data.get("mirror", "reduced")),
        out=str(data.get("out", "runs")),
        eval=_build(EvalSettings, data.get("eval"), "eval"),
    )


def load_config(path: Optional[str | Path]) -> ExperimentConfig:
    """Read a YAML file; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data)


def _plain(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, float) and v == float("inf"):
        return None
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(dataclasses.asdict(cfg))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable 16-hex digest of everything that affects results (the output dir is excluded)."""
    d = to_dict(cfg)
    d.pop("out", None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
