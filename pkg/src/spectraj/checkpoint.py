"""Versioned checkpoint container.

A checkpoint is a ``torch.save`` dictionary::

    {"magic": "SPECTRAJ-CKPT-1", "model_config": {...}, "params": {name: tensor},
     "optimizer": {...} | None, "epoch": int, "step": int, "meta": {...}}

Parameter names are namespaced ``estimator.*`` and ``interpolator.*``.
"""

from __future__ import annotations

from pathlib import Path

import torch

from .errors import ConfigError
from .model import ModelConfig, SpectralPredictor

MAGIC = "SPECTRAJ-CKPT-1"


def save_checkpoint(path, model: SpectralPredictor, optimizer=None, epoch: int = 0, step: int = 0, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "magic": MAGIC,
        "model_config": model.cfg.to_dict(),
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "step": int(step),
        "meta": meta or {},
    }
    torch.save(payload, path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint {str(path)!r} not found")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise ConfigError(f"{path} is not a {MAGIC} checkpoint")
    return payload


def load_model(path) -> tuple[SpectralPredictor, dict]:
    payload = read_checkpoint(path)
    model = SpectralPredictor(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["params"])
    return model, payload
