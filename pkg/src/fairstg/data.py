"""Data ingestion, node-level windowing, splits, normalization, adjacency builders."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from torch import nn

from .errors import (
    DegenerateStdError,
    EmptyDatasetError,
    ConfigError,
    ParameterError,
    ParseError,
    ValidationError,
)

log = logging.getLogger(__name__)

N_WEEKDAYS = 7


@dataclass
class RawDataset:
    values: np.ndarray  # N x T
    timestamps: np.ndarray  # datetime64[ns], length T
    node_ids: list
    node_coordinates: np.ndarray | None = None

    @property
    def n_nodes(self):
        return self.values.shape[0]

    @property
    def n_steps(self):
        return self.values.shape[1]


@dataclass
class AdjacencySpec:
    kind: str  # "fixed" | "adaptive"
    fixed_weights: np.ndarray | None = None
    embed_dim: int | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            w = self.fixed_weights
            if w is None or w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValidationError("fixed adjacency needs a square weight matrix")
            if not np.all(np.isfinite(w)) or (w < 0).any():
                raise ValidationError("fixed adjacency weights must be finite and non-negative")
        elif self.kind == "adaptive":
            if self.fixed_weights is not None:
                raise ValidationError("adaptive adjacency carries no precomputed matrix")
            if self.embed_dim is None or self.embed_dim < 1:
                raise ValidationError("adaptive adjacency needs embed_dim >= 1")
        else:
            raise ValidationError(f"unknown adjacency kind {self.kind!r}")

    @classmethod
    def adaptive(cls, embed_dim=10):
        return cls("adaptive", embed_dim=embed_dim)

    @classmethod
    def fixed(cls, weights):
        return cls("fixed", fixed_weights=np.asarray(weights, dtype=np.float64))


@dataclass
class NormalizationState:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateStdError(f"normalization std must be positive, got {self.std}")

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean


@dataclass
class SampleBatch:
    """Node-level samples; row ``i`` is node ``node_index[i]`` at ``window_start[i]``."""

    inputs: torch.Tensor  # M x w, normalized
    targets: torch.Tensor  # M x h, raw scale
    node_index: torch.Tensor  # M, long
    window_start: torch.Tensor  # M, long
    stats_mean: torch.Tensor  # M, raw-window mean
    stats_var: torch.Tensor  # M, raw-window population variance
    time_of_day: torch.Tensor  # M, in [0, 1)
    weekday: torch.Tensor  # M, long in [0, 7)

    def __len__(self):
        return self.inputs.shape[0]

    def to(self, dtype=None, device=None):
        kw = {}
        for name, t in vars(self).items():
            if t.is_floating_point():
                kw[name] = t.to(dtype=dtype or t.dtype, device=device)
            else:
                kw[name] = t.to(device=device)
        return SampleBatch(**kw)

    def select(self, idx):
        idx = torch.as_tensor(idx, dtype=torch.long)
        return SampleBatch(**{k: v[idx] for k, v in vars(self).items()})


# --------------------------------------------------------------------------- ingestion


def _parse_timestamps(raw, offset=2):
    ts = pd.to_datetime(pd.Series(raw), errors="coerce")
    bad = np.flatnonzero(ts.isna().to_numpy())
    if bad.size:
        raise ParseError(f"unparseable timestamp {raw[bad[0]]!r}", row=int(bad[0]) + offset, column="timestamp")
    return ts.to_numpy(dtype="datetime64[ns]")


def _parse_numeric(frame: pd.DataFrame, offset=2):
    out = frame.apply(pd.to_numeric, errors="coerce")
    bad = out.isna().to_numpy() & frame.notna().to_numpy()
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ParseError(
            f"non-numeric value {frame.iat[r, c]!r}", row=int(r) + offset, column=str(frame.columns[c])
        )
    return out.to_numpy(dtype=np.float64)


def validate_timestamps(ts: np.ndarray):
    if ts.size < 2:
        return
    diffs = np.diff(ts.astype("int64"))
    if (diffs <= 0).any():
        i = int(np.flatnonzero(diffs <= 0)[0])
        raise ValidationError(f"timestamps not strictly increasing at position {i + 1}")
    if (diffs != diffs[0]).any():
        i = int(np.flatnonzero(diffs != diffs[0])[0])
        raise ValidationError(f"irregular sampling interval at position {i + 1}")


def impute_missing(values: np.ndarray, policy="forward_fill"):
    if not np.isnan(values).any():
        return values
    if policy == "error":
        r, c = np.argwhere(np.isnan(values))[0]
        raise ValidationError(f"missing value for node {r} at step {c}")
    if policy == "zero":
        return np.nan_to_num(values, nan=0.0)
    if policy != "forward_fill":
        raise ConfigError(f"unknown missing_policy {policy!r}")
    frame = pd.DataFrame(values.T).ffill().bfill()
    if frame.isna().any().any():
        node = int(np.flatnonzero(frame.isna().all().to_numpy())[0])
        raise ValidationError(f"node {node} has no observed values")
    return frame.to_numpy(dtype=np.float64).T.copy()


def load_dataset(path, fmt="wide", missing_policy="forward_fill") -> RawDataset:
    """Read a wide (timestamp + one column per node) or long (timestamp,node,value) CSV."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(f"malformed CSV {path}: {exc}") from exc
    if frame.shape[1] < 2 or frame.shape[0] == 0:
        raise ParseError(f"{path}: expected a timestamp column and at least one value column")

    if fmt == "wide":
        ts = _parse_timestamps(frame.iloc[:, 0].to_numpy())
        node_ids = [str(c) for c in frame.columns[1:]]
        values = _parse_numeric(frame.iloc[:, 1:]).T
    elif fmt == "long":
        cols = [c.strip().lower() for c in frame.columns]
        missing = {"timestamp", "node", "value"} - set(cols)
        if missing:
            raise ParseError(f"{path}: long format needs columns timestamp,node,value; missing {sorted(missing)}")
        frame.columns = cols
        ts_all = _parse_timestamps(frame["timestamp"].to_numpy())
        vals = _parse_numeric(frame[["value"]])[:, 0]
        node_ids = list(dict.fromkeys(frame["node"].astype(str)))
        ts_unique, ts_pos = [], {}
        for t in ts_all:
            if t not in ts_pos:
                ts_pos[t] = len(ts_unique)
                ts_unique.append(t)
        ts = np.array(ts_unique, dtype="datetime64[ns]")
        node_pos = {n: i for i, n in enumerate(node_ids)}
        values = np.full((len(node_ids), len(ts)), np.nan)
        for row, (t, n, v) in enumerate(zip(ts_all, frame["node"].astype(str), vals)):
            i, j = node_pos[n], ts_pos[t]
            if not np.isnan(values[i, j]):
                raise ParseError(f"duplicate entry for node {n!r} at {t}", row=row + 2)
            values[i, j] = v
    else:
        raise ConfigError(f"unknown data format {fmt!r}")

    validate_timestamps(ts)
    values = impute_missing(values, missing_policy)
    return RawDataset(values=values, timestamps=ts, node_ids=node_ids)


def load_distances(path, node_ids) -> np.ndarray:
    """Pairwise distance CSV (node_a,node_b,distance) -> N x N matrix, inf where unknown."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"distances file not found: {path}")
    frame = pd.read_csv(path, dtype=str)
    cols = [c.strip().lower() for c in frame.columns]
    if cols[:3] != ["node_a", "node_b", "distance"]:
        raise ParseError(f"{path}: expected header node_a,node_b,distance")
    frame.columns = cols[:3] + cols[3:]
    dist = _parse_numeric(frame[["distance"]])[:, 0]
    pos = {str(n): i for i, n in enumerate(node_ids)}
    n = len(node_ids)
    out = np.full((n, n), np.inf)
    np.fill_diagonal(out, 0.0)
    for row, (a, b, d) in enumerate(zip(frame["node_a"].astype(str), frame["node_b"].astype(str), dist)):
        if a not in pos or b not in pos:
            raise ParseError(f"unknown node in distances: {a!r} / {b!r}", row=row + 2)
        if d < 0:
            raise ParseError("negative distance", row=row + 2, column="distance")
        out[pos[a], pos[b]] = d
    # one-directional entries are mirrored
    return np.minimum(out, out.T)


# --------------------------------------------------------------------------- windows and splits


@dataclass
class WindowSet:
    """All node-level samples whose windows start at ``starts``.

    Sample order is start-major, node-minor: flat index ``s * N + node``.
    """

    values: np.ndarray  # N x T raw
    timestamps: np.ndarray
    starts: np.ndarray
    w: int
    h: int

    @property
    def n_nodes(self):
        return self.values.shape[0]

    def __len__(self):
        return self.n_nodes * len(self.starts)

    def sample_pairs(self):
        n = self.n_nodes
        node = np.tile(np.arange(n), len(self.starts))
        start = np.repeat(self.starts, n)
        return node, start

    def subset(self, positions):
        return WindowSet(self.values, self.timestamps, self.starts[np.asarray(positions)], self.w, self.h)

    def batch(self, positions=None, norm: NormalizationState | None = None, dtype=torch.float32) -> SampleBatch:
        starts = self.starts if positions is None else self.starts[np.asarray(positions)]
        n = self.n_nodes
        node = np.tile(np.arange(n), len(starts))
        start = np.repeat(starts, n)
        steps_in = start[:, None] + np.arange(self.w)
        steps_out = start[:, None] + self.w + np.arange(self.h)
        raw_in = self.values[node[:, None], steps_in]
        targets = self.values[node[:, None], steps_out]
        inputs = norm.apply(raw_in) if norm is not None else raw_in
        ctx = encode_external(self.timestamps[start + self.w - 1])
        return SampleBatch(
            inputs=torch.as_tensor(inputs, dtype=dtype),
            targets=torch.as_tensor(targets, dtype=dtype),
            node_index=torch.as_tensor(node, dtype=torch.long),
            window_start=torch.as_tensor(start, dtype=torch.long),
            stats_mean=torch.as_tensor(raw_in.mean(axis=1), dtype=dtype),
            stats_var=torch.as_tensor(raw_in.var(axis=1), dtype=dtype),
            time_of_day=torch.as_tensor(ctx["time_of_day"], dtype=dtype),
            weekday=torch.as_tensor(ctx["weekday"], dtype=torch.long),
        )


def make_windows(ds: RawDataset, w=12, h=12) -> WindowSet:
    if w < 1 or h < 1:
        raise ParameterError("w and h must be >= 1")
    n_starts = ds.n_steps - w - h + 1
    if n_starts < 1:
        raise EmptyDatasetError(f"T={ds.n_steps} is too short for w={w}, h={h}")
    return WindowSet(ds.values, ds.timestamps, np.arange(n_starts), w, h)


def split_boundaries(n_starts, ratios=(0.7, 0.2, 0.1)):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n_train = math.floor(ratios[0] * n_starts + 1e-9)
    n_val = math.floor((ratios[0] + ratios[1]) * n_starts + 1e-9) - n_train
    n_test = n_starts - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"split of {n_starts} window starts leaves an empty part ({n_train}/{n_val}/{n_test})")
    return n_train, n_train + n_val


def split_dataset(ws: WindowSet, ratios=(0.7, 0.2, 0.1)):
    """Chronological split on window start, shared across nodes."""
    a, b = split_boundaries(len(ws.starts), ratios)
    idx = np.arange(len(ws.starts))
    return ws.subset(idx[:a]), ws.subset(idx[a:b]), ws.subset(idx[b:])


def fit_normalization(train: WindowSet | np.ndarray) -> NormalizationState:
    """Z-score statistics over the raw values covered by the training windows."""
    if isinstance(train, WindowSet):
        end = int(train.starts.max()) + train.w + train.h
        values = train.values[:, : end]
    else:
        values = np.asarray(train, dtype=np.float64)
    if values.size == 0:
        raise EmptyDatasetError("empty training split")
    std = float(values.std())
    if not std > 0 or not np.isfinite(std):
        raise DegenerateStdError("training values are constant; standard deviation is zero")
    return NormalizationState(mean=float(values.mean()), std=std)


def iter_batches(ws: WindowSet, batch_size, norm, shuffle=False, rng: np.random.Generator | None = None, dtype=torch.float32):
    """Yield SampleBatches of ``batch_size`` window starts (all nodes of each start)."""
    order = np.arange(len(ws.starts))
    if shuffle:
        if rng is None:
            raise ValueError("shuffle needs an rng")
        order = rng.permutation(order)
    for i in range(0, len(order), batch_size):
        yield ws.batch(order[i : i + batch_size], norm, dtype=dtype)


# --------------------------------------------------------------------------- adjacency


def build_gaussian_adjacency(dist, sigma=None, threshold=0.1) -> AdjacencySpec:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValidationError("distance matrix must be square")
    if (dist < 0).any():
        raise ValidationError("distances must be non-negative")
    if sigma is None:
        finite = dist[np.isfinite(dist)]
        sigma = float(finite.std())
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    with np.errstate(over="ignore"):
        weights = np.exp(-np.square(dist / sigma))
    weights[weights < threshold] = 0.0
    np.fill_diagonal(weights, 1.0)
    return AdjacencySpec.fixed(weights)


def cosine_similarity_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    if zero.any():
        log.warning("%d node series have zero norm; their similarities are set to 0", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    unit = x / safe[:, None]
    unit[zero] = 0.0
    return unit @ unit.T


def build_topk_adjacency(history, k_fraction=0.2) -> AdjacencySpec:
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[1] < 2:
        raise ParameterError("history must be N x T' with T' >= 2")
    if not 0 < k_fraction <= 1:
        raise ParameterError("k_fraction must lie in (0, 1]")
    n = history.shape[0]
    sim = cosine_similarity_matrix(history)
    weights = np.zeros((n, n))
    if n == 1:
        return AdjacencySpec.fixed(weights)
    k = math.ceil(k_fraction * (n - 1) - 1e-12)
    for i in range(n):
        cand = np.array([j for j in range(n) if j != i])
        order = np.argsort(-sim[i, cand], kind="stable")[:k]
        weights[i, cand[order]] = sim[i, cand[order]]
    return AdjacencySpec.fixed(np.clip(weights, 0.0, None))


# --------------------------------------------------------------------------- external factors


def encode_external(timestamps) -> dict:
    """Continuous time-of-day in [0, 1) and categorical weekday (Monday = 0)."""
    ts = pd.DatetimeIndex(np.asarray(timestamps, dtype="datetime64[ns]"))
    seconds = ts.hour * 3600 + ts.minute * 60 + ts.second
    return {
        "time_of_day": np.asarray(seconds / 86400.0, dtype=np.float64),
        "weekday": np.asarray(ts.weekday, dtype=np.int64),
    }


class ExternalEncoder(nn.Module):
    """Concatenates continuous context with learned weekday and node embeddings.

    The last index of each vocabulary is reserved for unseen categories.
    """

    def __init__(self, n_nodes, weekday_dim=4, node_dim=8):
        super().__init__()
        self.n_nodes = n_nodes
        self.weekday = nn.Embedding(N_WEEKDAYS + 1, weekday_dim)
        self.node = nn.Embedding(n_nodes + 1, node_dim)
        self.out_dim = 1 + weekday_dim + node_dim

    def forward(self, time_of_day, weekday, node_index):
        wd = torch.where((weekday >= 0) & (weekday < N_WEEKDAYS), weekday, torch.full_like(weekday, N_WEEKDAYS))
        nd = torch.where((node_index >= 0) & (node_index < self.n_nodes), node_index, torch.full_like(node_index, self.n_nodes))
        return torch.cat([time_of_day.unsqueeze(-1), self.weekday(wd), self.node(nd)], dim=-1)


@dataclass
class PreparedData:
    raw: RawDataset
    train: WindowSet
    val: WindowSet
    test: WindowSet
    norm: NormalizationState
    adjacency: AdjacencySpec
    extras: dict = field(default_factory=dict)


def prepare(cfg) -> PreparedData:
    """Run the full data pipeline described by a :class:`~fairstg.config.Config`."""
    d = cfg.data
    if d.path is None:
        raise ConfigError("data.path is not set")
    raw = load_dataset(d.path, d.format, d.missing_policy)
    windows = make_windows(raw, d.w, d.h)
    train, val, test = split_dataset(windows, d.ratios)
    if d.norm == "standard":
        norm = fit_normalization(train)
    else:
        norm = NormalizationState(0.0, 1.0)
    adj = d.adjacency
    if adj.kind == "adaptive":
        spec = AdjacencySpec.adaptive(cfg.model.d_emb)
    elif adj.kind == "gaussian":
        if d.distances_path is None:
            raise ConfigError("adjacency.kind=gaussian requires data.distances_path")
        spec = build_gaussian_adjacency(load_distances(d.distances_path, raw.node_ids), adj.sigma, adj.threshold)
    else:
        end = int(train.starts.max()) + train.w
        spec = build_topk_adjacency(raw.values[:, :end], adj.k_fraction)
    return PreparedData(raw, train, val, test, norm, spec)
