import csv
from dataclasses import replace

import numpy as np
import pytest
import torch

from spectraj.checkpoint import MAGIC, load_model, read_checkpoint, save_checkpoint
from spectraj.errors import ConfigError
from spectraj.synthetic import synthetic_samples
from spectraj.training import LOG_COLUMNS, TrainConfig, TrainingDiverged, build_model, train


@pytest.fixture
def samples(tiny_cfg):
    return synthetic_samples(4, 4, tiny_cfg.t_h, tiny_cfg.t_f, seed=1)


def _params(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def test_one_step_moves_both_stages(tiny_cfg, samples):
    model = build_model(tiny_cfg, 0)
    before = _params(model)
    train(model, samples, TrainConfig(epochs=1, batch_size=len(samples)))
    after = _params(model)
    moved = [k for k in before if not torch.equal(before[k], after[k])]
    assert any(k.startswith("estimator.") for k in moved)
    assert any(k.startswith("interpolator.") for k in moved)


def test_deterministic(tiny_cfg, samples):
    cfg = TrainConfig(epochs=3, batch_size=3, seed=5)
    a = train(build_model(tiny_cfg, 5), samples, cfg)
    b = train(build_model(tiny_cfg, 5), samples, cfg)
    assert a.step_totals == b.step_totals
    assert a.epoch_log == b.epoch_log


def test_resume_matches_uninterrupted(tiny_cfg, samples, tmp_path):
    full = build_model(tiny_cfg, 0)
    ref = train(full, samples, TrainConfig(epochs=4, batch_size=3), run_dir=tmp_path / "full")

    first = train(build_model(tiny_cfg, 0), samples, TrainConfig(epochs=2, batch_size=3), run_dir=tmp_path / "part")
    model, payload = load_model(first.checkpoint)
    assert payload["epoch"] == 2
    rest = train(
        model, samples, TrainConfig(epochs=4, batch_size=3), run_dir=tmp_path / "part",
        start_epoch=payload["epoch"], start_step=payload["step"], optimizer_state=payload["optimizer"],
    )
    assert rest.epochs_done == 4 and rest.steps_done == ref.steps_done
    for k, v in _params(full).items():
        torch.testing.assert_close(model.state_dict()[k], v, rtol=0, atol=0)
    assert (tmp_path / "full" / "loss_log.csv").read_text() == (tmp_path / "part" / "loss_log.csv").read_text()


def test_loss_log_and_checkpoint(tiny_cfg, samples, tmp_path):
    res = train(build_model(tiny_cfg, 0), samples, TrainConfig(epochs=2, batch_size=4, checkpoint_every=1), run_dir=tmp_path)
    with open(tmp_path / "loss_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert [int(r["epoch"]) for r in rows] == [0, 1]
    assert [int(r["step"]) for r in rows] == [2, 4]
    assert (tmp_path / "checkpoint_epoch1.pt").is_file()
    payload = read_checkpoint(res.checkpoint)
    assert payload["magic"] == MAGIC
    assert set(payload["model_config"]) >= {"t_h", "K_c", "N_key"}
    assert all(k.split(".")[0] in ("estimator", "interpolator") for k in payload["params"])


def test_max_steps_and_accumulation(tiny_cfg, samples):
    res = train(build_model(tiny_cfg, 0), samples, TrainConfig(epochs=10, batch_size=2, max_steps=3))
    assert res.steps_done == 3
    res = train(build_model(tiny_cfg, 0), samples, TrainConfig(epochs=1, batch_size=2, effective_batch_size=8))
    assert res.steps_done == 1 and len(res.step_totals) == 4


def test_linear_variant_has_no_apl(tiny_cfg, samples):
    res = train(build_model(replace(tiny_cfg, interpolation="linear"), 0), samples, TrainConfig(epochs=1, batch_size=8))
    assert res.epoch_log[0]["apl"] == 0.0


def test_empty_data(tiny_cfg):
    with pytest.raises(ConfigError):
        train(build_model(tiny_cfg, 0), [], TrainConfig(epochs=1))


def test_non_finite_loss_aborts(tiny_cfg, samples):
    bad = list(samples)
    obs = bad[2].observation.copy()
    obs[0, 0] = np.nan
    bad[2] = replace(bad[2], observation=obs)
    with pytest.raises(TrainingDiverged) as exc:
        train(build_model(tiny_cfg, 0), bad, TrainConfig(epochs=1, batch_size=len(bad)))
    assert exc.value.epoch == 0 and exc.value.batch == 0
    assert set(exc.value.terms) == {"akl", "kl", "apl", "total"}


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=64, effective_batch_size=10)
    assert TrainConfig(batch_size=64, effective_batch_size=2000).accumulation == 32


def test_checkpoint_errors(tmp_path, tiny_cfg):
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "missing.pt")
    torch.save({"magic": "other"}, tmp_path / "bad.pt")
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "bad.pt")
    model = build_model(tiny_cfg, 3)
    path = save_checkpoint(tmp_path / "ok.pt", model)
    back, _ = load_model(path)
    assert back.cfg == tiny_cfg
    for k, v in model.state_dict().items():
        assert torch.equal(back.state_dict()[k], v)
