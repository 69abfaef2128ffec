"""Keypoints-estimation and spectrum-interpolation networks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .spectral import KeypointSchedule, torch_dft, torch_idft

LOGVAR_CLAMP = 20.0


@dataclass
class ModelConfig:
    t_h: int = 8
    t_f: int = 12
    d_embed: int = 64
    d_model: int = 128
    K_c: int = 20
    N_key: int = 3
    key_steps: tuple[int, ...] | None = None  # defaults to N_key evenly spaced steps ending at t_f
    encoder_layers: int = 4
    decoder_layers: int = 4
    heads: int = 8
    ffn_dim: int = 512
    latent_dim: int = 128
    context_grid: int = 32
    context_extent: float = 10.0
    use_spectrum: bool = True
    interpolation: str = "spectrum"  # or "linear"
    coord_scale: float = 1.0

    def __post_init__(self):
        if self.key_steps is not None:
            self.key_steps = tuple(int(s) for s in self.key_steps)
        if self.d_model != 2 * self.d_embed:
            raise ConfigError(f"d_model ({self.d_model}) must equal 2 * d_embed ({self.d_embed})")
        if self.K_c < 1 or self.N_key < 1 or self.t_h < 1 or self.t_f < 1:
            raise ConfigError("K_c, N_key, t_h and t_f must be >= 1")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")
        if self.interpolation not in ("spectrum", "linear"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")
        if self.coord_scale <= 0:
            raise ConfigError("coord_scale must be positive")
        sched = self.schedule
        sched.validate(self.t_f)
        if len(sched) != self.N_key:
            raise ConfigError(f"key_steps {sched.key_steps} do not have N_key={self.N_key} entries")

    @property
    def schedule(self) -> KeypointSchedule:
        if self.key_steps is None:
            return KeypointSchedule.uniform(self.N_key, self.t_f)
        return KeypointSchedule(self.key_steps)

    @property
    def t_total(self) -> int:
        return self.t_h + self.t_f

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["key_steps"] is not None:
            d["key_steps"] = list(d["key_steps"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


def to_tokens(points: torch.Tensor, use_spectrum: bool) -> torch.Tensor:
    """``(..., N, 2)`` points to the ``(..., N, 4)`` rows the networks consume."""
    if use_spectrum:
        return torch_dft(points)
    return torch.cat([points, torch.zeros_like(points)], dim=-1)


def from_tokens(tokens: torch.Tensor, use_spectrum: bool) -> torch.Tensor:
    if use_spectrum:
        return torch_idft(tokens)
    return tokens[..., :2]


class MLP(nn.Sequential):
    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__(nn.Linear(d_in, d_hidden), nn.ReLU(), nn.Linear(d_hidden, d_out))


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


class Transformer(nn.Module):
    """Non-autoregressive encoder-decoder; returns the decoder's last hidden states."""

    def __init__(self, d_model: int, heads: int, ffn_dim: int, enc_layers: int, dec_layers: int):
        super().__init__()
        self.d_model = d_model
        self.encoder = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(d_model, heads, ffn_dim, dropout=0.0, batch_first=True),
            enc_layers,
            enable_nested_tensor=False,
        )
        self.decoder = nn.TransformerDecoder(
            nn.TransformerDecoderLayer(d_model, heads, ffn_dim, dropout=0.0, batch_first=True),
            dec_layers,
        )

    def _pe(self, x: torch.Tensor) -> torch.Tensor:
        return sinusoidal_encoding(x.shape[-2], self.d_model).to(dtype=x.dtype, device=x.device)

    def forward(self, source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        memory = self.encoder(source + self._pe(source))
        return self.decoder(target + self._pe(target), memory)


@dataclass
class StyleFeatureBank:
    features: torch.Tensor  # (..., K_c, d_model)
    latent_mean: torch.Tensor  # (..., K_c, latent_dim)
    latent_logvar: torch.Tensor


@dataclass
class KeypointPrediction:
    spectrums: torch.Tensor  # (..., M, N_key, 4)
    keypoints: torch.Tensor = field(init=False)  # (..., M, N_key, 2)
    use_spectrum: bool = True

    def __post_init__(self):
        self.keypoints = from_tokens(self.spectrums, self.use_spectrum)


class KeypointsEstimator(nn.Module):
    """Stage one: spectrum + context -> K_c styles -> keypoint spectrums."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_embed
        self.te = MLP(4, d, d)
        self.ce = MLP(cfg.context_grid**2, d, d)
        self.spec_proj = nn.Linear(4, cfg.d_model)
        self.transformer = Transformer(cfg.d_model, cfg.heads, cfg.ffn_dim, cfg.encoder_layers, cfg.decoder_layers)
        self.adjacency = nn.Parameter(torch.randn(cfg.K_c, cfg.t_h) * 0.1)
        self.gcn = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.mean_head = nn.Linear(cfg.d_model, cfg.latent_dim)
        self.logvar_head = nn.Linear(cfg.d_model, cfg.latent_dim)
        self.kd = MLP(cfg.d_model + cfg.latent_dim, cfg.d_model, cfg.N_key * 4)
        # decoder starts deterministic in the latent draw; it learns to use the noise
        with torch.no_grad():
            self.kd[0].weight[:, cfg.d_model :].zero_()

    def embed_trajectory(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-2:] != (self.cfg.t_h, 4):
            raise ShapeError(f"expected (..., {self.cfg.t_h}, 4) spectrum rows, got {tuple(tokens.shape)}")
        return self.te(tokens)

    def embed_context(self, context: torch.Tensor) -> torch.Tensor:
        f = self.ce(context)
        return f.unsqueeze(-2).expand(*f.shape[:-1], self.cfg.t_h, f.shape[-1])

    def encode(self, f_e: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        if f_e.shape[-1] != self.cfg.d_model or f_e.shape[-2] != tokens.shape[-2]:
            raise ShapeError(f"f_e {tuple(f_e.shape)} and tokens {tuple(tokens.shape)} are inconsistent")
        return self.transformer(f_e, self.spec_proj(tokens))

    def style_aggregate(self, f_tra: torch.Tensor) -> StyleFeatureBank:
        weights = torch.softmax(self.adjacency, dim=-1)
        features = F.relu(self.gcn(weights @ f_tra))
        logvar = self.logvar_head(features).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return StyleFeatureBank(features, self.mean_head(features), logvar)

    @staticmethod
    def sample_styles(
        bank: StyleFeatureBank,
        samples_per_style: int = 1,
        generator: torch.Generator | None = None,
        noise: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Reparameterized draws, draw-major: output row ``d * K_c + k`` is draw ``d`` of style ``k``.

        ``noise`` of shape ``(..., samples_per_style * K_c, latent_dim)`` replaces
        the internal standard-normal draws when given.
        """
        if samples_per_style < 1:
            raise ConfigError("samples_per_style must be >= 1")
        mean, std = bank.latent_mean, torch.exp(0.5 * bank.latent_logvar)
        reps = [1] * (mean.dim() - 2) + [samples_per_style, 1]
        mean, std = mean.repeat(*reps), std.repeat(*reps)
        if noise is None:
            k_c = bank.latent_mean.shape[-2]
            shape = (*bank.latent_mean.shape[:-2], k_c, bank.latent_mean.shape[-1])
            noise = torch.cat(
                [torch.randn(shape, generator=generator, dtype=mean.dtype, device=mean.device) for _ in range(samples_per_style)],
                dim=-2,
            )
        elif noise.shape != mean.shape:
            raise ShapeError(f"noise shape {tuple(noise.shape)} != {tuple(mean.shape)}")
        return mean + std * noise

    def decode_keypoints(self, features: torch.Tensor, latent: torch.Tensor) -> KeypointPrediction:
        """KD on ``[style feature, latent draw]``; ``features`` is tiled over draws if shorter."""
        if features.shape[-2] != latent.shape[-2]:
            reps = latent.shape[-2] // features.shape[-2]
            features = features.repeat(*([1] * (features.dim() - 2)), reps, 1)
        spec = self.kd(torch.cat([features, latent], dim=-1)).unflatten(-1, (self.cfg.N_key, 4))
        return KeypointPrediction(spec, use_spectrum=self.cfg.use_spectrum)

    def forward(
        self,
        tokens: torch.Tensor,
        context: torch.Tensor,
        samples_per_style: int = 1,
        generator: torch.Generator | None = None,
        noise: torch.Tensor | None = None,
    ) -> dict:
        f_t = self.embed_trajectory(tokens)
        f_c = self.embed_context(context)
        f_e = torch.cat([f_t, f_c], dim=-1)
        f_tra = self.encode(f_e, tokens)
        bank = self.style_aggregate(f_tra)
        latent = self.sample_styles(bank, samples_per_style, generator, noise)
        pred = self.decode_keypoints(bank.features, latent)
        return dict(f_t=f_t, f_c=f_c, f_e=f_e, f_tra=f_tra, bank=bank, latent=latent, prediction=pred)


@dataclass
class FullSpectrumPrediction:
    spectrum: torch.Tensor  # (..., t_total, 4)
    reconstructed: torch.Tensor  # (..., t_total, 2)
    future: torch.Tensor  # (..., t_f, 2)


def tile_tokens(tokens: torch.Tensor, length: int) -> torch.Tensor:
    """Repeat each of the N rows ``length // N`` times, filling the remainder with the last row."""
    n = tokens.shape[-2]
    reps = max(length // n, 1)
    index = [min(j // reps, n - 1) for j in range(length)]
    return tokens[..., index, :]


class SpectrumInterpolator(nn.Module):
    """Stage two: keypoint spectrum + context -> full (t_h + t_f) spectrum."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_embed
        self.te = MLP(4, d, d)
        self.ce = MLP(cfg.context_grid**2, d, d)
        self.spec_proj = nn.Linear(4, cfg.d_model)
        self.transformer = Transformer(cfg.d_model, cfg.heads, cfg.ffn_dim, cfg.encoder_layers, cfg.decoder_layers)
        self.head = nn.Linear(cfg.d_model, 4)

    def embed_keypoint_spectrum(self, key_spec: torch.Tensor) -> torch.Tensor:
        if key_spec.shape[-2:] != (self.cfg.N_key, 4):
            raise ShapeError(f"expected (..., {self.cfg.N_key}, 4) keypoint spectrum, got {tuple(key_spec.shape)}")
        return self.te(key_spec)

    def embed_context(self, context: torch.Tensor) -> torch.Tensor:
        return self.ce(context)

    def interpolate(self, key_spec: torch.Tensor, f_t_key: torch.Tensor, context_emb: torch.Tensor) -> FullSpectrumPrediction:
        if f_t_key.shape[-2] != key_spec.shape[-2] or context_emb.shape[-1] != self.cfg.d_embed:
            raise ShapeError("keypoint embedding and context embedding shapes are inconsistent")
        ctx = context_emb.unsqueeze(-2).expand(*f_t_key.shape[:-1], context_emb.shape[-1])
        f_e_key = torch.cat([f_t_key, ctx], dim=-1)
        target = self.spec_proj(tile_tokens(key_spec, self.cfg.t_total))
        spectrum = self.head(self.transformer(f_e_key, target))
        recon = from_tokens(spectrum, self.cfg.use_spectrum)
        return FullSpectrumPrediction(spectrum, recon, recon[..., self.cfg.t_h :, :])

    def forward(self, key_spec: torch.Tensor, context: torch.Tensor) -> FullSpectrumPrediction:
        return self.interpolate(key_spec, self.embed_keypoint_spectrum(key_spec), self.embed_context(context))

    def interpolate_batch(self, prediction: KeypointPrediction, context: torch.Tensor) -> list[FullSpectrumPrediction]:
        """One output per style row of ``prediction`` (unbatched inputs)."""
        if prediction.keypoints.shape[0] == 0:
            return []
        spec = to_tokens(prediction.keypoints.detach(), self.cfg.use_spectrum)
        out = self.forward(spec, context.expand(spec.shape[0], -1))
        return [FullSpectrumPrediction(out.spectrum[i], out.reconstructed[i], out.future[i]) for i in range(spec.shape[0])]


class SpectralPredictor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.estimator = KeypointsEstimator(cfg)
        self.interpolator = SpectrumInterpolator(cfg)

    def stage_two(self, keypoints: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """Future trajectories from keypoints; gradients do not reach stage one."""
        tokens = to_tokens(keypoints.detach(), self.cfg.use_spectrum)
        return self.interpolator(tokens, context).future
