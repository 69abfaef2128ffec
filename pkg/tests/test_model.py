import numpy as np
import pytest
import torch

from spectraj.errors import ConfigError, ShapeError
from spectraj.losses import akl_loss, apl_loss, kl_loss
from spectraj.model import (
    KeypointPrediction,
    KeypointsEstimator,
    ModelConfig,
    SpectralPredictor,
    SpectrumInterpolator,
    StyleFeatureBank,
    tile_tokens,
    to_tokens,
)
from spectraj.spectral import torch_idft


def _inputs(cfg, batch=3, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    obs = torch.randn(batch, cfg.t_h, 2, generator=g, dtype=torch.float64)
    ctx = torch.rand(batch, cfg.context_grid**2, generator=g, dtype=torch.float64)
    return to_tokens(obs, cfg.use_spectrum).to(dtype), ctx.to(dtype)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_embed=32, d_model=128)
    with pytest.raises(ConfigError):
        ModelConfig(key_steps=(4, 8))
    with pytest.raises(ConfigError):
        ModelConfig(interpolation="cubic")
    cfg = ModelConfig(key_steps=(2, 7, 12))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"bogus": 1})


def test_te_pointwise(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg)
    tokens, _ = _inputs(tiny_cfg, 1)
    tokens[0, 1] = tokens[0, 0]
    f_t = est.embed_trajectory(tokens)
    assert f_t.shape == (1, tiny_cfg.t_h, tiny_cfg.d_embed)
    torch.testing.assert_close(f_t[0, 0], f_t[0, 1])
    perm = torch.randperm(tiny_cfg.t_h)
    torch.testing.assert_close(est.embed_trajectory(tokens[:, perm]), f_t[:, perm])
    assert torch.isfinite(est.embed_trajectory(torch.zeros_like(tokens))).all()


def test_te_shape_error(tiny_cfg):
    with pytest.raises(ShapeError):
        KeypointsEstimator(tiny_cfg).embed_trajectory(torch.zeros(1, tiny_cfg.t_h + 1, 4))


def test_context_broadcast(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg)
    _, ctx = _inputs(tiny_cfg, 2)
    f_c = est.embed_context(ctx)
    assert f_c.shape == (2, tiny_cfg.t_h, tiny_cfg.d_embed)
    assert torch.equal(f_c[:, :1].expand_as(f_c), f_c)


def test_batch_permutation(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg).eval()
    tokens, ctx = _inputs(tiny_cfg, 4)
    noise = torch.randn(4, tiny_cfg.K_c, tiny_cfg.latent_dim)
    perm = torch.tensor([2, 0, 3, 1])
    a = est(tokens, ctx, noise=noise)
    b = est(tokens[perm], ctx[perm], noise=noise[perm])
    torch.testing.assert_close(a["f_tra"][perm], b["f_tra"])
    torch.testing.assert_close(a["prediction"].keypoints[perm], b["prediction"].keypoints)


def test_style_aggregate_convex(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg)
    with torch.no_grad():
        est.gcn.weight.copy_(torch.eye(tiny_cfg.d_model))
    pre = torch.softmax(est.adjacency, -1) @ torch.ones(tiny_cfg.t_h, tiny_cfg.d_model)
    torch.testing.assert_close(pre, torch.ones_like(pre))
    bank = est.style_aggregate(torch.ones(tiny_cfg.t_h, tiny_cfg.d_model))
    torch.testing.assert_close(bank.features, torch.ones(tiny_cfg.K_c, tiny_cfg.d_model))


def test_identical_adjacency_rows_identical_styles(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg)
    with torch.no_grad():
        est.adjacency[1] = est.adjacency[0]
    bank = est.style_aggregate(torch.randn(tiny_cfg.t_h, tiny_cfg.d_model))
    assert torch.equal(bank.features[0], bank.features[1])


def test_sample_styles():
    k_c, d = 3, 5
    mean = torch.randn(k_c, d)
    bank = StyleFeatureBank(torch.zeros(k_c, 8), mean, torch.full((k_c, d), -20.0))
    draws = KeypointsEstimator.sample_styles(bank, 1, torch.Generator().manual_seed(0))
    assert draws.shape == (k_c, d)
    torch.testing.assert_close(draws, mean, atol=1e-4, rtol=0)
    bank = StyleFeatureBank(torch.zeros(k_c, 8), mean, torch.zeros(k_c, d))
    a = KeypointsEstimator.sample_styles(bank, 4, torch.Generator().manual_seed(7))
    b = KeypointsEstimator.sample_styles(bank, 4, torch.Generator().manual_seed(7))
    assert a.shape == (4 * k_c, d) and torch.equal(a, b)
    with pytest.raises(ConfigError):
        KeypointsEstimator.sample_styles(bank, 0)


def test_decode_keypoints(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg)
    pred = est.decode_keypoints(torch.randn(5, tiny_cfg.d_model), torch.randn(5, tiny_cfg.latent_dim))
    assert pred.spectrums.shape == (5, tiny_cfg.N_key, 4)
    assert pred.keypoints.shape == (5, tiny_cfg.N_key, 2)
    torch.testing.assert_close(pred.keypoints, torch_idft(pred.spectrums), atol=1e-6, rtol=0)
    zero = KeypointPrediction(torch.zeros(2, 3, 4))
    assert not zero.keypoints.any()


def test_tile_tokens():
    tok = torch.arange(3.0)[:, None].expand(3, 4)
    assert tile_tokens(tok, 20)[:, 0].tolist() == [0] * 6 + [1] * 6 + [2] * 8
    assert tile_tokens(tok[:1], 5)[:, 0].tolist() == [0] * 5


def test_interpolator_contract(tiny_cfg):
    ip = SpectrumInterpolator(tiny_cfg)
    key = torch.randn(2, tiny_cfg.N_key, 4)
    ctx = torch.rand(2, tiny_cfg.context_grid**2)
    f_key = ip.embed_keypoint_spectrum(key)
    assert f_key.shape == (2, tiny_cfg.N_key, tiny_cfg.d_embed)
    out = ip(key, ctx)
    assert out.spectrum.shape == (2, tiny_cfg.t_total, 4)
    assert out.reconstructed.shape == (2, tiny_cfg.t_total, 2)
    assert torch.equal(out.future, out.reconstructed[:, tiny_cfg.t_h :])
    torch.testing.assert_close(out.reconstructed, torch_idft(out.spectrum), atol=1e-6, rtol=0)
    with pytest.raises(ShapeError):
        ip.embed_keypoint_spectrum(torch.zeros(2, tiny_cfg.N_key + 1, 4))


def test_interpolate_batch(tiny_cfg):
    ip = SpectrumInterpolator(tiny_cfg)
    ctx = torch.rand(tiny_cfg.context_grid**2)
    spec = torch.randn(1, tiny_cfg.N_key, 4).expand(3, -1, -1).contiguous()
    outs = ip.interpolate_batch(KeypointPrediction(spec), ctx)
    assert len(outs) == 3
    torch.testing.assert_close(outs[0].future, outs[2].future)
    assert ip.interpolate_batch(KeypointPrediction(torch.zeros(0, tiny_cfg.N_key, 4)), ctx) == []


def test_stage_two_detached(tiny_cfg):
    model = SpectralPredictor(tiny_cfg)
    tokens, ctx = _inputs(tiny_cfg, 2)
    kp = model.estimator(tokens, ctx)["prediction"].keypoints
    model.stage_two(kp.reshape(-1, tiny_cfg.N_key, 2), ctx.repeat_interleave(tiny_cfg.K_c, 0)).sum().backward()
    assert all(p.grad is None for p in model.estimator.parameters())
    assert any(p.grad is not None for p in model.interpolator.parameters())


def test_no_spectrum_tokens(tiny_cfg):
    from dataclasses import replace

    cfg = replace(tiny_cfg, use_spectrum=False)
    pts = torch.randn(2, cfg.t_h, 2)
    tok = to_tokens(pts, False)
    assert torch.equal(tok[..., :2], pts) and not tok[..., 2:].any()
    out = SpectralPredictor(cfg).estimator(tok, torch.rand(2, cfg.context_grid**2))
    pred = out["prediction"]
    assert torch.equal(pred.keypoints, pred.spectrums[..., :2])


def test_forward_deterministic(tiny_cfg):
    torch.manual_seed(0)
    est = KeypointsEstimator(tiny_cfg)
    tokens, ctx = _inputs(tiny_cfg)
    a = est(tokens, ctx, generator=torch.Generator().manual_seed(1))["prediction"].keypoints
    b = est(tokens, ctx, generator=torch.Generator().manual_seed(1))["prediction"].keypoints
    assert torch.equal(a, b)


def test_encode_gradients_reach_both_inputs(tiny_cfg):
    est = KeypointsEstimator(tiny_cfg).double()
    f_e = torch.randn(1, tiny_cfg.t_h, tiny_cfg.d_model, dtype=torch.float64, requires_grad=True)
    tok = torch.randn(1, tiny_cfg.t_h, 4, dtype=torch.float64, requires_grad=True)
    est.encode(f_e, tok).pow(2).sum().backward()
    assert f_e.grad.abs().sum() > 0 and tok.grad.abs().sum() > 0


# --------------------------------------------------------------------------
# finite-difference gradient checks over every trainable parameter


def _fd_check(module, loss_fn, eps=1e-6, tol=1e-3):
    """Relative error of analytic vs central-difference gradients, per parameter tensor."""
    module.zero_grad()
    loss_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for name, p in module.named_parameters():
            analytic = p.grad.clone() if p.grad is not None else torch.zeros_like(p)
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * eps)
            denom = max(analytic.norm().item(), numeric.norm().item(), 1e-8)
            err = (analytic - numeric).norm().item() / denom
            assert err < tol, f"{name}: relative error {err:.3g}"
            worst = max(worst, err)
    return worst


def _tiny_double(tiny_cfg, seed=0):
    torch.manual_seed(seed)
    model = SpectralPredictor(tiny_cfg).double()
    # give the latent columns of KD non-zero weights so their gradient path is exercised
    with torch.no_grad():
        model.estimator.kd[0].weight.normal_(0, 0.3)
    return model


def test_gradcheck_stage_one(tiny_cfg):
    model = _tiny_double(tiny_cfg)
    tokens, ctx = _inputs(tiny_cfg, 2, dtype=torch.float64)
    noise = torch.randn(2, tiny_cfg.K_c, tiny_cfg.latent_dim, dtype=torch.float64)
    gt = torch.randn(2, tiny_cfg.N_key, 2, dtype=torch.float64)

    def loss():
        out = model.estimator(tokens, ctx, noise=noise)
        bank = out["bank"]
        return akl_loss(out["prediction"].keypoints, gt) + kl_loss(bank.latent_mean, bank.latent_logvar)

    assert _fd_check(model.estimator, loss) < 1e-3


def test_gradcheck_stage_two(tiny_cfg):
    model = _tiny_double(tiny_cfg, seed=1)
    g = torch.Generator().manual_seed(5)
    key = to_tokens(torch.randn(2, tiny_cfg.N_key, 2, generator=g, dtype=torch.float64), True)
    ctx = torch.rand(2, tiny_cfg.context_grid**2, generator=g, dtype=torch.float64)
    gt = torch.randn(2, tiny_cfg.t_f, 2, generator=g, dtype=torch.float64)

    def loss():
        return apl_loss(model.interpolator(key, ctx).future, gt)

    assert _fd_check(model.interpolator, loss) < 1e-3
