import numpy as np
import pandas as pd
import pytest
import torch

from fairstg.config import Config
from fairstg.data import AdjacencySpec, NormalizationState, RawDataset, make_windows
from fairstg.model import FairSTG


def make_raw(n=4, t=30, seed=0, start="2024-01-01"):
    rng = np.random.default_rng(seed)
    values = 10 + rng.standard_normal((n, t)).cumsum(axis=1)
    ts = pd.date_range(start, periods=t, freq="5min").to_numpy()
    return RawDataset(values=values, timestamps=ts, node_ids=[f"s{i}" for i in range(n)])


@pytest.fixture
def raw():
    return make_raw()


def toy_model(n=4, w=6, h=3, d=8, channels=4, dtype=torch.float64, seed=0, k_c=2, arch="gcn3"):
    torch.manual_seed(seed)
    cfg = Config().model
    cfg.d, cfg.channels, cfg.d_k, cfg.recognizer_hidden, cfg.d_emb = d, channels, 4, 6, 3
    cfg.recognizer_arch = arch
    norm = NormalizationState(10.0, 2.0)
    model = FairSTG(n, w, h, norm, AdjacencySpec.adaptive(3), cfg, k_c=k_c)
    return model.to(dtype)


def toy_batch(n=4, w=6, h=3, n_windows=2, dtype=torch.float64, seed=0):
    raw = make_raw(n=n, t=w + h + n_windows - 1, seed=seed)
    ws = make_windows(raw, w, h)
    return ws.batch(None, NormalizationState(10.0, 2.0), dtype=dtype)


def pytest_terminal_summary(terminalreporter):
    from criteria import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
