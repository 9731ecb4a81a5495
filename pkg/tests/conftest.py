import numpy as np
import pytest
import torch

from emodist.config import TrainConfig
from emodist.data import SynthConfig, generate_synthetic

MICRO = {
    "encoder.width": 8, "encoder.heads": 2, "encoder.ff_width": 8,
    "encoder.layers.v": 1, "encoder.layers.a": 1, "encoder.layers.t": 1,
    "encoder.dropout": 0.0, "data.max_len": 16,
    "emotion_space.d_h": 4, "emotion_space.proj_dim": 8,
    "info.hidden": 8, "fusion.hidden": 8, "scl.queue_size": 64,
    "train.dtype": "float64",
}

TINY = {
    "encoder.width": 16, "encoder.heads": 2, "encoder.ff_width": 16,
    "encoder.layers.v": 1, "encoder.layers.a": 1, "encoder.layers.t": 1,
    "encoder.dropout": 0.0, "data.max_len": 32,
    "emotion_space.d_h": 8, "emotion_space.proj_dim": 16,
    "info.hidden": 16, "fusion.hidden": 16, "scl.queue_size": 128,
    "optim.lr": 1e-3, "train.batch_size": 8, "train.epochs": 1,
}


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def micro_config():
    return TrainConfig.from_flat(MICRO)


@pytest.fixture
def tiny_config():
    return TrainConfig.from_flat(TINY)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    cfg = SynthConfig(n=40, q=3, dims={"v": 5, "a": 4, "t": 6},
                      seq_lens={"v": (2, 5), "a": (3, 6), "t": (1, 4)}, seed=11)
    return generate_synthetic(cfg, root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# lines written by the acceptance tests, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
