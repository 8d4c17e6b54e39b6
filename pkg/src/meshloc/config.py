"""Declarative run configuration (JSON) covering every module default.

Top-level keys: ``seed``, ``dtype``, ``grid``, ``gnn``, ``cnn``, ``match``,
``loss``, ``augment``, ``schedule``, ``solver``, ``scene``.  Every section
is optional; omitted keys keep their defaults and unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .gnn import GnnConfig
from .image.cnn import CnnConfig
from .matcher import MatchConfig
from .pose.icp import IcpConfig
from .pose.ransac import SolverConfig
from .synth.scenes import SceneParams
from .training.augment import AugmentConfig
from .training.losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    width: int = 512
    height: int = 288
    levels: int = 7


@dataclass(frozen=True)
class TrainStage:
    stage: int = 1
    epochs: int = 1
    lr: float = 1e-3
    image_augment: float = 1.0  # strength of photometric jitter
    mesh_augment: float = 1.0  # strength of mesh rotation (used in stage 1 only)

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and learning rate must be non-negative")


@dataclass(frozen=True)
class TrainSchedule:
    stages: tuple = (TrainStage(1, 2, 1e-3), TrainStage(2, 2, 5e-4), TrainStage(3, 2, 2e-4))
    frame_stride: int = 1  # use every n-th training frame
    head_lr_scale: float = 1.0  # learning-rate multiplier for the matcher heads (match.*)

    def __post_init__(self):
        stages = tuple(s if isinstance(s, TrainStage) else _build(TrainStage, s, "schedule.stages") for s in self.stages)
        object.__setattr__(self, "stages", stages)
        order = [s.stage for s in stages]
        if order != sorted(order):
            raise ValueError(f"stages must run in order, got {order}")
        if self.head_lr_scale <= 0:
            raise ValueError("head_lr_scale must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dtype: str = "float64"
    grid: GridConfig = field(default_factory=GridConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    solver: SolverConfig = field(default_factory=SolverConfig)
    scene: SceneParams = field(default_factory=SceneParams)

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if tuple(self.gnn.split) != tuple(self.cnn.head_widths):
            raise ValueError(f"descriptor split {self.gnn.split} differs from CNN head widths {self.cnn.head_widths}")
        if len(self.gnn.split) != self.grid.levels:
            raise ValueError(f"{len(self.gnn.split)} descriptor levels for a {self.grid.levels}-level grid")
        if len(self.match.beams) != self.grid.levels - 1:
            raise ValueError(f"need {self.grid.levels - 1} beam widths, got {len(self.match.beams)}")
        if len(self.loss.margins) != self.grid.levels - 1:
            raise ValueError(f"need {self.grid.levels - 1} margins, got {len(self.loss.margins)}")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


_NESTED = {
    (RunConfig, "grid"): GridConfig,
    (RunConfig, "gnn"): GnnConfig,
    (RunConfig, "cnn"): CnnConfig,
    (RunConfig, "match"): MatchConfig,
    (RunConfig, "loss"): LossWeights,
    (RunConfig, "augment"): AugmentConfig,
    (RunConfig, "schedule"): TrainSchedule,
    (RunConfig, "solver"): SolverConfig,
    (RunConfig, "scene"): SceneParams,
    (SolverConfig, "icp"): IcpConfig,
}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{path}.{key}") if sub else value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
