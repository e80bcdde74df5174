import numpy as np
import pytest

from polyglot_ctc.encoder import EncoderConfig
from polyglot_ctc.model import MultiHeadModel, PhoneInventory


def random_log_posteriors(rng, T, K):
    x = rng.normal(size=(T, K)) * 1.5
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def random_labels(rng, K, max_len):
    u = int(rng.integers(0, max_len + 1))
    return [int(v) for v in rng.integers(1, K, size=u)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    cfg = EncoderConfig(input_dim=3, hidden_dim=4, num_layers=2)
    inv = [PhoneInventory("L1", ["∅", "a", "b", "c"]), PhoneInventory("L2", ["∅", "a", "d"])]
    model = MultiHeadModel.init(cfg, inv, seed=3)
    r = np.random.default_rng(5)
    for _, arr in model.tensors():
        arr[...] = r.uniform(-0.5, 0.5, size=arr.shape)
    return model


# acceptance verdicts, one line each, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
