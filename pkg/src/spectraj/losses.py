"""Training objectives. All functions accept leading batch dimensions and
return the mean over them."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError


@dataclass(frozen=True)
class LossWeights:
    mu1: float = 0.5  # AKL
    mu2: float = 1.0  # KL
    mu3: float = 0.5  # APL

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.mu3) < 0:
            raise ConfigError("loss weights must be non-negative")


def pointwise_distance(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(pred - gt, dim=-1)


def per_style_keypoint_error(pred_keypoints: torch.Tensor, gt_keypoints: torch.Tensor) -> torch.Tensor:
    """``(..., K, N, 2)`` vs ``(..., N, 2)`` -> ``(..., K)`` mean keypoint distances."""
    return pointwise_distance(pred_keypoints, gt_keypoints.unsqueeze(-3)).mean(dim=-1)


def akl_loss(pred_keypoints: torch.Tensor, gt_keypoints: torch.Tensor) -> torch.Tensor:
    if pred_keypoints.shape[-3] == 0:
        raise ValueError("AKL needs at least one style")
    return per_style_keypoint_error(pred_keypoints, gt_keypoints).min(dim=-1).values.mean()


def kl_loss(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over features, averaged over the rest."""
    return (0.5 * (mean.pow(2) + logvar.exp() - logvar - 1.0).sum(dim=-1)).mean()


def apl_loss(pred_future: torch.Tensor, gt_future: torch.Tensor) -> torch.Tensor:
    return pointwise_distance(pred_future, gt_future).mean()


def total_loss(akl, kl, apl, w: LossWeights = LossWeights()):
    return w.mu1 * akl + w.mu2 * kl + w.mu3 * apl
