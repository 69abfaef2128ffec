"""Displacement metrics, best-of-K sampling and the ablation runner."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
import torch

from .context import SceneOccupancy
from .data import TrajectorySample
from .errors import ConfigError
from .features import make_batch, sample_seed
from .model import ModelConfig, SpectralPredictor
from .spectral import linear_interpolate
from .training import TrainConfig, build_model, train


def _step_distances(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    # explicit per-axis formula so scalar recomputation gives identical bits
    dx = pred[..., 0] - gt[..., 0]
    dy = pred[..., 1] - gt[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def _mean(values) -> float:
    """Correctly rounded mean; independent of summation order."""
    return math.fsum(values) / len(values)


def ade(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    return _mean(_step_distances(pred, gt).tolist())


def fde(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    return float(_step_distances(pred[-1], gt[-1]))


def best_of_k(preds, gt) -> tuple[float, float]:
    """Minimum ADE and minimum FDE over the K predictions, taken independently."""
    preds, gt = np.asarray(preds, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] < 1:
        raise ValueError("best_of_k expects a (K, t_f, 2) array with K >= 1")
    dist = _step_distances(preds, gt[None])
    return min(_mean(row) for row in dist.tolist()), float(dist[:, -1].min())


@dataclass
class PredictionSet:
    trajectories: np.ndarray  # (K, t_f, 2) absolute coordinates
    keypoints: np.ndarray  # (K, N_key, 2) absolute coordinates
    style_keypoints: np.ndarray  # (K_c, N_key, 2), first draw of every style
    local_keypoints: np.ndarray  # (K, N_key, 2) model frame: anchor-relative, divided by coord_scale


@dataclass
class MetricReport:
    ade: float
    fde: float
    K: int
    n_samples: int
    dataset: str = ""
    variant: str = "full"
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def draws_for(K: int, K_c: int) -> int:
    return max(1, math.ceil(K / K_c))


def _noise(samples: Sequence[TrajectorySample], draws: int, K_c: int, latent_dim: int, seed: int) -> torch.Tensor:
    out = []
    for s in samples:
        g = torch.Generator().manual_seed(sample_seed(seed, s))
        out.append(torch.cat([torch.randn(K_c, latent_dim, generator=g) for _ in range(draws)]))
    return torch.stack(out)


@torch.no_grad()
def predict_batch(
    model: SpectralPredictor,
    samples: Sequence[TrajectorySample],
    K: int,
    seed: int = 0,
    scene_stats: dict[str, SceneOccupancy] | None = None,
) -> list[PredictionSet]:
    """K futures per sample.

    Row ``d * K_c + k`` is draw ``d`` of style ``k``; the first K rows are
    kept, so K < K_c uses the first K styles and K > K_c uses
    ``ceil(K / K_c)`` draws per style. Noise depends only on ``seed`` and
    each sample's identity.
    """
    if K < 1:
        raise ConfigError("K must be >= 1")
    cfg = model.cfg
    model.eval()
    batch = make_batch(samples, cfg, scene_stats)
    draws = draws_for(K, cfg.K_c)
    noise = _noise(samples, draws, cfg.K_c, cfg.latent_dim, seed)
    out = model.estimator(batch.tokens, batch.context, samples_per_style=draws, noise=noise)
    keypoints = out["prediction"].keypoints[:, :K]  # (B, K, N_key, 2)
    B = len(samples)

    if cfg.interpolation == "linear":
        kp = keypoints.double().numpy()
        futures = np.stack(
            [[linear_interpolate(np.zeros(2), kp[b, k], cfg.schedule, cfg.t_f) for k in range(K)] for b in range(B)]
        )
    else:
        flat = keypoints.reshape(B * K, cfg.N_key, 2)
        context = batch.context.repeat_interleave(K, dim=0)
        futures = model.stage_two(flat, context).reshape(B, K, cfg.t_f, 2).double().numpy()

    scale = cfg.coord_scale
    kp_abs = keypoints.double().numpy() * scale
    style_kp = out["prediction"].keypoints[:, : cfg.K_c].double().numpy() * scale
    result = []
    for b, s in enumerate(samples):
        result.append(
            PredictionSet(futures[b] * scale + s.anchor, kp_abs[b] + s.anchor, style_kp[b] + s.anchor, keypoints[b].double().numpy())
        )
    return result


def generate_predictions(
    model: SpectralPredictor,
    sample: TrajectorySample,
    K: int,
    seed: int = 0,
    scene_stats: dict[str, SceneOccupancy] | None = None,
) -> PredictionSet:
    return predict_batch(model, [sample], K, seed, scene_stats)[0]


def evaluate(
    model: SpectralPredictor,
    samples: Sequence[TrajectorySample],
    K: int = 20,
    seed: int = 0,
    scene_stats: dict[str, SceneOccupancy] | None = None,
    dataset: str = "",
    variant: str = "full",
    chunk: int = 256,
) -> MetricReport:
    if not samples:
        raise ConfigError("no evaluation samples")
    ades, fdes = [], []
    chunk = max(1, min(chunk, 16384 // K))
    for i in range(0, len(samples), chunk):
        part = samples[i : i + chunk]
        for s, p in zip(part, predict_batch(model, part, K, seed, scene_stats)):
            a, f = best_of_k(p.trajectories, s.future + s.anchor)
            ades.append(a)
            fdes.append(f)
    return MetricReport(
        ade=_mean(ades),
        fde=_mean(fdes),
        K=K,
        n_samples=len(samples),
        dataset=dataset,
        variant=variant,
        seed=seed,
    )


# --------------------------------------------------------------------------
# ablations

ABLATIONS: dict[str, dict] = {
    "a1_no_dft": {"N_key": 1, "use_spectrum": False},
    "a2_spectrum_nkey1": {"N_key": 1},
    "b1_nkey3": {"N_key": 3},
    "b2_nkey6": {"N_key": 6},
    "c_linear_interp": {"N_key": 3, "interpolation": "linear"},
    "full": {},
}


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATIONS)}")
    overrides = {"use_spectrum": True, "interpolation": "spectrum"} | ABLATIONS[variant]
    if "N_key" in ABLATIONS[variant]:
        overrides["key_steps"] = None
    return replace(base, **overrides)


def run_ablation(
    variant: str,
    train_samples: Sequence[TrajectorySample],
    test_samples: Sequence[TrajectorySample],
    base: ModelConfig,
    train_cfg: TrainConfig,
    K: int = 20,
    scene_stats: dict[str, SceneOccupancy] | None = None,
    dataset: str = "",
    run_dir=None,
) -> tuple[MetricReport, SpectralPredictor]:
    cfg = variant_config(base, variant)
    model = build_model(cfg, train_cfg.seed)
    train(model, train_samples, train_cfg, scene_stats=scene_stats, run_dir=run_dir)
    report = evaluate(model, test_samples, K, train_cfg.seed, scene_stats, dataset, variant)
    return report, model


def format_table(reports: Sequence[MetricReport]) -> str:
    header = f"{'variant':<20} {'dataset':<12} {'K':>5} {'n':>6} {'ADE':>10} {'FDE':>10}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.variant:<20} {r.dataset:<12} {r.K:>5d} {r.n_samples:>6d} {r.ade:>10.4f} {r.fde:>10.4f}")
    return "\n".join(lines)
