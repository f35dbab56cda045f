"""Run configuration: one JSON file drives generation, training, and eval.

Unknown keys anywhere in the file are errors; every count must be positive.
The master seed is recorded in the header of every artifact a command writes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .querygen import SPLITS


def _from_dict(cls, data: dict, context: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config key(s) in {context}: {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if hasattr(f.type, "__dataclass_fields__") or f.name in _NESTED:
            kwargs[f.name] = _from_dict(_NESTED[f.name], value, f.name)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


@dataclass
class SceneConfig:
    min_objects: int = 5
    max_objects: int = 10
    width: int = 256
    height: int = 192
    duplicate_prob: float = 0.3


@dataclass
class DatasetConfig:
    train_scenes: int = 2000
    dev_scenes: int = 500
    test_scenes: int = 500
    queries_per_scene: int = 5
    split_mix: dict = field(default_factory=lambda: {s: 0.2 for s in SPLITS})


@dataclass
class ModelConfig:
    embed_dim: int = 50
    gru_hidden: int = 256
    entity_dim: int = 64
    entity_sigma: float = 0.1
    joint_dim: int = 50
    normalize_eps: float = 0.0
    embedding_file: str | None = None


@dataclass
class TrainConfig:
    tagger_batch: int = 64
    tagger_epochs: int = 6
    tagger_lr: float = 5e-4
    unary_batch: int = 256
    spatial_batch: int = 8
    module_epochs: int = 12
    module_lr: float = 1e-2
    weight_decay: float = 1e-2
    patience: int = 2


@dataclass
class Config:
    seed: int = 0
    catalogue: str | None = None   # path; None selects the built-in catalogue
    out_dir: str = "out"
    scene: SceneConfig = field(default_factory=SceneConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        d = self.dataset
        for name, value in (("train_scenes", d.train_scenes),
                            ("dev_scenes", d.dev_scenes),
                            ("test_scenes", d.test_scenes),
                            ("queries_per_scene", d.queries_per_scene)):
            if value <= 0:
                raise ValueError(f"dataset.{name} must be positive")
        if not (1 <= self.scene.min_objects <= self.scene.max_objects <= 15):
            raise ValueError("scene object range must satisfy 1 <= min <= max <= 15")
        unknown = set(d.split_mix) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown split(s) in split_mix: {sorted(unknown)}")
        weights = [d.split_mix.get(s, 0.0) for s in SPLITS]
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("split_mix weights must be non-negative and sum > 0")

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED = {
    "scene": SceneConfig,
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}


def config_from_dict(data: dict) -> Config:
    cfg = _from_dict(Config, data, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: Config, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
