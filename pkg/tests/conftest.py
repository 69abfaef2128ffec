from pathlib import Path

import pytest
import torch

from spectraj.model import ModelConfig

FIXTURES = Path(__file__).parent / "fixtures"

# filled by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(
        t_h=4, t_f=4, d_embed=4, d_model=8, K_c=2, N_key=2, encoder_layers=1, decoder_layers=1,
        heads=2, ffn_dim=16, latent_dim=4, context_grid=4, context_extent=2.0,
    )


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


TINY_MODEL = {
    "t_h": 8, "t_f": 12, "d_embed": 8, "d_model": 16, "K_c": 4, "N_key": 3, "encoder_layers": 1,
    "decoder_layers": 1, "heads": 2, "ffn_dim": 32, "latent_dim": 4, "context_grid": 8,
}


@pytest.fixture
def tiny_yaml(tmp_path) -> Path:
    """Small CLI config on the synthetic corpus."""
    import yaml

    doc = {
        "data": {"format": "synthetic", "synthetic_linear": 4, "synthetic_sine": 4},
        "model": TINY_MODEL,
        "train": {"epochs": 2, "batch_size": 4},
        "eval": {"K": 6},
        "context": {"scene_grid": 16},
    }
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path
