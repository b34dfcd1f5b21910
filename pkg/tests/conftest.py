import pathlib
import sys

SRC = pathlib.Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

import pytest
import torch

from t2vlab.config import config_from_dict
from t2vlab.diffusion import make_linear_beta_schedule
from t2vlab.model import ModelConfig, build_model

torch.manual_seed(0)


TINY_MODEL = {
    "H": 16,
    "W": 16,
    "F": 4,
    "M": 8,
    "D": 16,
    "K": 2,
    "channels": (8, 16),
    "heads": 2,
    "map_hidden": 4,
    "queue_capacity": 32,
}


@pytest.fixture(scope="session")
def t10_schedule():
    return make_linear_beta_schedule(10, 0.1, 0.2)


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=7)


@pytest.fixture()
def tiny_run_config(tmp_path):
    return config_from_dict(
        {
            "model": {**TINY_MODEL, "channels": list(TINY_MODEL["channels"])},
            "schedule": {"T": 50},
            "train": {
                "batch_size": 2,
                "pretrain_steps": 6,
                "steps": 6,
                "checkpoint_interval": 3,
                "out_dir": str(tmp_path / "runs"),
            },
            "sampler": {"steps": 4, "mg_alpha": 5.0},
            "data": {"num_clips": 3, "speed": 1},
        }
    )


def make_tiny_video(batch: int = 2, config: ModelConfig | None = None, seed: int = 0):
    cfg = config or ModelConfig(**TINY_MODEL)
    gen = torch.Generator().manual_seed(seed)
    return torch.randn((batch, cfg.F, cfg.C, cfg.H, cfg.W), generator=gen)
