import numpy as np
import pytest

from fblab.config import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return TrainConfig(K=3, N=6, J=400, batch=100, epochs=2, enc_hidden=6, dec_hidden=6, seed=3)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
