"""Pipeline configuration: one JSON document covering every stage.

Unknown keys are rejected everywhere, so a typo fails fast instead of
silently falling back to a default.  CLI flags override file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .dataset_builder import CropSpec
from .errors import ConfigurationError
from .evaluate import ToleranceSpec
from .losses import LossConfig
from .net.model import DEFAULT_WIDTHS
from .postprocess import DbscanConfig
from .voxel import VoxelGridSpec


@dataclass(frozen=True)
class PostConfig:
    degree: int = 3
    delta_dist: float = 0.3

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise ConfigurationError("polynomial degree must be >= 1")
        if self.delta_dist <= 0:
            raise ConfigurationError("delta_dist must be positive")


@dataclass(frozen=True)
class NetConfig:
    widths: tuple[int, ...] = DEFAULT_WIDTHS

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if any(w < 1 for w in self.widths):
            raise ConfigurationError("level widths must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 0.001
    batch_size: int = 6

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be non-negative")


def _from_mapping(cls, data: Mapping, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {section} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class PipelineConfig:
    grid: VoxelGridSpec = field(default_factory=VoxelGridSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    post: PostConfig = field(default_factory=PostConfig)
    tolerance: ToleranceSpec = field(default_factory=ToleranceSpec)
    crop: CropSpec = field(default_factory=CropSpec)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        if "grid" in data:
            kwargs["grid"] = VoxelGridSpec.from_dict(data["grid"])
        for key, sub in (
            ("loss", LossConfig),
            ("dbscan", DbscanConfig),
            ("post", PostConfig),
            ("net", NetConfig),
            ("train", TrainConfig),
            ("crop", CropSpec),
        ):
            if key in data:
                kwargs[key] = _from_mapping(sub, data[key], key)
        if "tolerance" in data:
            tol = data["tolerance"]
            if isinstance(tol, Mapping):
                kwargs["tolerance"] = _from_mapping(ToleranceSpec, tol, "tolerance")
            else:
                kwargs["tolerance"] = ToleranceSpec(taus=tuple(tol))
        if "seed" in data:
            kwargs["seed"] = int(data["seed"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        return cls.from_dict(data)
