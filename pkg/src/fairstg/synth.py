"""Synthetic heterogeneous ST data: a regular group and a regime-switching noisy group."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .config import SynthConfig
from .data import RawDataset


def group_sizes(n_nodes, group_split):
    n_a = int(round(group_split * n_nodes))
    return n_a, n_nodes - n_a


def generate_synthetic(cfg: SynthConfig, seed=0):
    """Return ``(RawDataset, group)`` where ``group[i]`` is 0 for group A, 1 for group B.

    Both groups share a daily-style sinusoid with per-node phase. Group A adds
    N(0, sigma_a) noise. Group B adds a regime-switching mean and N(0, sigma_b)
    noise; the regime is a square wave of +/- regime_scale with period
    ``regime_period`` and random per-node phase, plus optional random level
    switches with probability ``regime_switch_prob`` per step.
    """
    rng = np.random.default_rng(seed)
    n, t = cfg.n_nodes, cfg.n_steps
    n_a, _ = group_sizes(n, cfg.group_split)
    group = np.array([0] * n_a + [1] * (n - n_a))
    steps = np.arange(t)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    values = cfg.base + cfg.amplitude * np.sin(2 * np.pi * steps[None, :] / cfg.period + phase[:, None])
    noise = rng.standard_normal((n, t))
    regime = np.zeros((n, t))
    if cfg.regime_period > 0:
        half = max(1, cfg.regime_period // 2)
        offsets = rng.integers(0, cfg.regime_period, size=n)
        regime += cfg.regime_scale * np.where(((steps[None, :] + offsets[:, None]) // half) % 2 == 0, 1.0, -1.0)
    if cfg.regime_switch_prob > 0:
        switches = rng.random((n, t)) < cfg.regime_switch_prob
        levels = rng.uniform(-cfg.regime_jump, cfg.regime_jump, size=(n, t))
        # level in force at each step: the draw at the most recent switch (or step 0)
        last = np.maximum.accumulate(np.where(switches, steps[None, :], 0), axis=1)
        regime += np.take_along_axis(levels, last, axis=1)
    sigma = np.where(group == 0, cfg.sigma_a, cfg.sigma_b)
    values = values + regime * (group[:, None] == 1) + sigma[:, None] * noise
    timestamps = pd.date_range(cfg.start, periods=t, freq=f"{cfg.interval_minutes}min").to_numpy()
    node_ids = [f"n{i:03d}" for i in range(n)]
    return RawDataset(values=values, timestamps=timestamps, node_ids=node_ids), group


def write_wide_csv(ds: RawDataset, path):
    ts = pd.DatetimeIndex(ds.timestamps).strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(["timestamp"] + list(ds.node_ids)) + "\n")
        for j, stamp in enumerate(ts):
            fh.write(stamp + "," + ",".join(f"{v:.6f}" for v in ds.values[:, j]) + "\n")


def write_long_csv(ds: RawDataset, path):
    ts = pd.DatetimeIndex(ds.timestamps).strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w", newline="\n") as fh:
        fh.write("timestamp,node,value\n")
        for j, stamp in enumerate(ts):
            for i, node in enumerate(ds.node_ids):
                fh.write(f"{stamp},{node},{ds.values[i, j]:.6f}\n")
