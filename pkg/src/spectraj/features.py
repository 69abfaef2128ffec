"""Turn :class:`TrajectorySample` lists into model-ready tensors."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .context import SceneOccupancy, build_context_map, flatten_context
from .data import TrajectorySample
from .model import ModelConfig, to_tokens
from .spectral import extract_keypoints


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, t_h, 4) stage-one input rows
    context: torch.Tensor  # (B, G*G)
    future: torch.Tensor  # (B, t_f, 2), scaled model units
    keypoints: torch.Tensor  # (B, N_key, 2)
    key_tokens: torch.Tensor  # (B, N_key, 4) teacher-forcing input for stage two

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def index(self, idx) -> "Batch":
        return Batch(*(t[idx] for t in (self.tokens, self.context, self.future, self.keypoints, self.key_tokens)))


def context_vectors(
    samples: Sequence[TrajectorySample], cfg: ModelConfig, scene_stats: dict[str, SceneOccupancy] | None
) -> np.ndarray:
    out = np.zeros((len(samples), cfg.context_grid**2))
    for i, s in enumerate(samples):
        out[i] = flatten_context(build_context_map(s, scene_stats, cfg.context_grid, cfg.context_extent))
    return out


def make_batch(
    samples: Sequence[TrajectorySample],
    cfg: ModelConfig,
    scene_stats: dict[str, SceneOccupancy] | None = None,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    schedule = cfg.schedule
    obs = np.stack([s.observation for s in samples]) / cfg.coord_scale
    fut = np.stack([s.future for s in samples]) / cfg.coord_scale
    keys = np.stack([extract_keypoints(f, schedule) for f in fut])
    obs_t = torch.as_tensor(obs, dtype=torch.float64)
    keys_t = torch.as_tensor(keys, dtype=torch.float64)
    return Batch(
        tokens=to_tokens(obs_t, cfg.use_spectrum).to(dtype),
        context=torch.as_tensor(context_vectors(samples, cfg, scene_stats), dtype=dtype),
        future=torch.as_tensor(fut, dtype=dtype),
        keypoints=keys_t.to(dtype),
        key_tokens=to_tokens(keys_t, cfg.use_spectrum).to(dtype),
    )


def sample_seed(seed: int, sample: TrajectorySample) -> int:
    """Per-sample RNG seed that depends only on the sample's identity."""
    key = f"{sample.scene_id}/{sample.agent_id}/{sample.start_index}".encode()
    return (int(seed) * 1_000_003 + zlib.crc32(key)) % (2**63)
