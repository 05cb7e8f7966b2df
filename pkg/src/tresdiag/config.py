"""Pipeline configuration: one JSON document, every field defaulted, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import GeneratorConfig
from .errors import ConfigError
from .interpret import InterpretConfig
from .model import ArchConfig
from .train import TrainConfig

DEFAULT_SEED = 14


@dataclass
class SelectConfig:
    k: int = 15
    gradcam_weight: float = 0.5
    lime_weight: float = 0.5


@dataclass
class PathsConfig:
    dataset: str = "runs/dataset"
    run_full: str = "runs/full"
    attributions: str = "runs/attributions"
    selection: str = "runs/selection"
    run_selected: str = "runs/selected"
    report: str = "runs/report"


@dataclass
class PipelineConfig:
    dataset: GeneratorConfig = field(default_factory=GeneratorConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    interpret: InterpretConfig = field(default_factory=InterpretConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = DEFAULT_SEED

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arch"] = self.arch.to_dict()
        return d


_SECTIONS = {
    "dataset": GeneratorConfig,
    "train": TrainConfig,
    "interpret": InterpretConfig,
    "select": SelectConfig,
    "paths": PathsConfig,
}


def _section(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")
    kw = {name: _section(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    if "arch" in data:
        kw["arch"] = ArchConfig.from_dict(data["arch"])
    if "seed" in data:
        kw["seed"] = int(data["seed"])
    cfg = PipelineConfig(**kw)
    cfg.dataset.validate()
    cfg.train.validate()
    cfg.arch.validate()
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
