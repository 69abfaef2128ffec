"""Optimization loop for both sub-networks."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from .checkpoint import save_checkpoint
from .context import SceneOccupancy
from .data import TrajectorySample
from .errors import ConfigError, NumericError
from .features import Batch, make_batch
from .losses import LossWeights, akl_loss, apl_loss, kl_loss, total_loss
from .model import ModelConfig, SpectralPredictor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "akl", "kl", "apl", "total")


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 64
    effective_batch_size: int | None = None  # gradient accumulation target, e.g. 2000
    epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 keeps only the final checkpoint
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.effective_batch_size is not None and self.effective_batch_size < self.batch_size:
            raise ConfigError("effective_batch_size must be >= batch_size")

    @property
    def accumulation(self) -> int:
        if self.effective_batch_size is None:
            return 1
        return math.ceil(self.effective_batch_size / self.batch_size)


FULL_SCALE_TRAIN = {
    "ethucy": TrainConfig(batch_size=2000, epochs=800),
    "sdd": TrainConfig(batch_size=2000, epochs=150),
}


class TrainingDiverged(NumericError):
    def __init__(self, epoch: int, batch: int, terms: dict):
        self.epoch, self.batch, self.terms = epoch, batch, terms
        values = ", ".join(f"{k}={v:.6g}" for k, v in terms.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {values}")


@dataclass
class TrainResult:
    epoch_log: list[dict] = field(default_factory=list)
    step_totals: list[float] = field(default_factory=list)
    checkpoint: Path | None = None
    epochs_done: int = 0
    steps_done: int = 0


def build_model(cfg: ModelConfig, seed: int = 0) -> SpectralPredictor:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return SpectralPredictor(cfg)


def compute_losses(model: SpectralPredictor, batch: Batch, generator: torch.Generator | None = None) -> dict:
    """AKL and KL on stage one; APL on stage two fed ground-truth keypoints."""
    out = model.estimator(batch.tokens, batch.context, generator=generator)
    bank = out["bank"]
    terms = {
        "akl": akl_loss(out["prediction"].keypoints, batch.keypoints),
        "kl": kl_loss(bank.latent_mean, bank.latent_logvar),
    }
    if model.cfg.interpolation == "spectrum":
        future = model.interpolator(batch.key_tokens, batch.context).future
        terms["apl"] = apl_loss(future, batch.future)
    else:
        terms["apl"] = batch.future.new_zeros(())
    return terms


def _epoch_generator(seed: int, epoch: int, stream: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + epoch * 7 + stream)


def train(
    model: SpectralPredictor,
    samples: Sequence[TrajectorySample],
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    scene_stats: dict[str, SceneOccupancy] | None = None,
    run_dir: str | Path | None = None,
    start_epoch: int = 0,
    start_step: int = 0,
    optimizer_state: dict | None = None,
) -> TrainResult:
    """Train both stages with one Adam optimizer.

    The stage-two input is detached from stage one, so AKL and KL only move
    estimator weights and APL only moves interpolator weights. Shuffling and
    latent noise are seeded from ``(seed, epoch)``, which makes a resumed run
    identical to an uninterrupted one.
    """
    if not samples:
        raise ConfigError("no training samples")
    data = make_batch(samples, model.cfg, scene_stats)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    run_dir = Path(run_dir) if run_dir is not None else None
    writer = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "loss_log.csv"
        fresh = start_epoch == 0 or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        if fresh:
            writer.writeheader()

    result = TrainResult(epochs_done=start_epoch, steps_done=start_step)
    step = start_step
    model.train()
    try:
        for epoch in range(start_epoch, cfg.epochs):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            order = torch.randperm(len(data), generator=_epoch_generator(cfg.seed, epoch, 0))
            noise_gen = _epoch_generator(cfg.seed, epoch, 1)
            batches = [order[i : i + cfg.batch_size] for i in range(0, len(data), cfg.batch_size)]
            sums = dict.fromkeys(("akl", "kl", "apl", "total"), 0.0)
            optimizer.zero_grad()
            for b, idx in enumerate(batches):
                terms = compute_losses(model, data.index(idx), noise_gen)
                loss = total_loss(terms["akl"], terms["kl"], terms["apl"], weights)
                values = {k: v.item() for k, v in terms.items()} | {"total": loss.item()}
                if not all(math.isfinite(v) for v in values.values()):
                    raise TrainingDiverged(epoch, b, values)
                (loss / cfg.accumulation).backward()
                for k in sums:
                    sums[k] += values[k]
                result.step_totals.append(values["total"])
                if (b + 1) % cfg.accumulation == 0 or b == len(batches) - 1:
                    optimizer.step()
                    optimizer.zero_grad()
                    step += 1
                    if cfg.max_steps is not None and step >= cfg.max_steps:
                        batches = batches[: b + 1]
                        break
            row = {"epoch": epoch, "step": step} | {k: v / len(batches) for k, v in sums.items()}
            result.epoch_log.append(row)
            if writer is not None:
                writer.writerow(row)
            log.info("epoch %d step %d total %.5f", epoch, step, row["total"])
            result.epochs_done, result.steps_done = epoch + 1, step
            if run_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(run_dir / f"checkpoint_epoch{epoch + 1}.pt", model, optimizer, epoch + 1, step, _meta(cfg, weights))
    finally:
        if writer is not None:
            fh.close()
    model.eval()
    if run_dir is not None:
        result.checkpoint = save_checkpoint(
            run_dir / "checkpoint.pt", model, optimizer, result.epochs_done, result.steps_done, _meta(cfg, weights)
        )
    return result


def _meta(cfg: TrainConfig, weights: LossWeights) -> dict:
    d = asdict(cfg)
    d["betas"] = list(d["betas"])
    return {"train": d, "weights": asdict(weights)}
