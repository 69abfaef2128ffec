"""Run configuration: a nested YAML document plus dotted-path overrides.

Sections and their keys (defaults in :data:`DEFAULTS`)::

    data:    format (synthetic | ethucy | sdd), path, source_fps, target_fps,
             protocol (leave_one_out | fixed_split | none), test_scene,
             manifest, window_stride, synthetic_linear, synthetic_sine,
             synthetic_seed
    model:   every ModelConfig field
    train:   every TrainConfig field
    loss:    mu1, mu2, mu3
    eval:    K, seed
    context: scene_grid, cache_dir

``--set train.epochs=5`` style overrides are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import yaml

from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .training import TrainConfig

DESK_MODEL = ModelConfig(latent_dim=16).to_dict()

DEFAULTS: dict = {
    "data": {
        "format": "synthetic",
        "path": None,
        "source_fps": None,
        "target_fps": 2.5,
        "protocol": "none",
        "test_scene": None,
        "manifest": None,
        "window_stride": 1,
        "synthetic_linear": 16,
        "synthetic_sine": 16,
        "synthetic_seed": 0,
    },
    "model": DESK_MODEL,
    "train": {**asdict(TrainConfig()), "betas": [0.9, 0.999]},
    "loss": asdict(LossWeights()),
    "eval": {"K": 20, "seed": 0},
    "context": {"scene_grid": 64, "cache_dir": None},
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw) if raw.strip() else None


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {str(path)!r} not found")
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError("config file must be a mapping")
        cfg = _merge(cfg, doc)
    for item in overrides or []:
        keys, value = parse_override(item)
        node = {}
        cursor = node
        for k in keys[:-1]:
            cursor[k] = {}
            cursor = cursor[k]
        cursor[keys[-1]] = value
        cfg = _merge(cfg, node)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    model_config(cfg)
    train_config(cfg)
    loss_weights(cfg)
    if cfg["data"]["format"] not in ("synthetic", "ethucy", "sdd"):
        raise ConfigError(f"unknown data.format {cfg['data']['format']!r}")
    if cfg["data"]["protocol"] not in ("none", "leave_one_out", "fixed_split"):
        raise ConfigError(f"unknown data.protocol {cfg['data']['protocol']!r}")
    if int(cfg["eval"]["K"]) < 1:
        raise ConfigError("eval.K must be >= 1")


def model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(cfg["model"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**cfg["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def loss_weights(cfg: dict) -> LossWeights:
    return LossWeights(**cfg["loss"])


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def dump_config(cfg: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
