"""Run configuration: nested dataclasses backed by a YAML document.

Keys are addressed with dotted paths (``train.mu_f``, ``data.adjacency.sigma``).
A bare leaf name (``mu_f``) is accepted when it is unique across sections.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

ABLATIONS = ("full", "no_fe", "no_fo")
ADJACENCY_KINDS = ("adaptive", "gaussian", "topk")
MISSING_POLICIES = ("forward_fill", "zero", "error")


@dataclass
class AdjacencyConfig:
    kind: str = "adaptive"
    sigma: float | None = None
    threshold: float = 0.1
    k_fraction: float = 0.2


@dataclass
class DataConfig:
    path: str | None = None
    format: str = "wide"
    distances_path: str | None = None
    w: int = 12
    h: int = 12
    ratios: list = field(default_factory=lambda: [0.7, 0.2, 0.1])
    norm: str = "standard"
    missing_policy: str = "forward_fill"
    mape_epsilon: float = 1e-3
    adjacency: AdjacencyConfig = field(default_factory=AdjacencyConfig)


@dataclass
class ModelConfig:
    d: int = 64
    channels: int = 32
    d_emb: int = 10
    d_k: int = 32
    recognizer_arch: str = "gcn3"
    recognizer_hidden: int = 64
    weekday_embed_dim: int = 4
    node_embed_dim: int = 8


@dataclass
class TrainConfig:
    lr: float = 1e-3
    grad_clip: float = 5.0
    batch_size: int = 64
    warmup_epochs: int = 30
    total_epochs: int = 100
    fairness: bool = True
    mu_r: float = 1.0
    mu_f: float = 0.5
    mu_s: float = 0.1
    k_c: int = 5
    K: float = 0.2
    omega: float = 4.0
    threshold: float = 0.5
    ablation: str = "full"
    patience: int = 15

    @property
    def mu(self):
        return (self.mu_r, self.mu_f, self.mu_s)


@dataclass
class SynthConfig:
    n_nodes: int = 20
    n_steps: int = 2000
    group_split: float = 0.5
    sigma_a: float = 1.0
    sigma_b: float = 2.0
    # group B regimes: a +/- regime_scale square wave with this period (0 disables)
    regime_period: int = 24
    regime_scale: float = 5.0
    # plus random level switches drawn from U(-regime_jump, regime_jump)
    regime_switch_prob: float = 0.0
    regime_jump: float = 10.0
    base: float = 50.0
    amplitude: float = 10.0
    period: int = 288
    interval_minutes: int = 5
    start: str = "2024-01-01T00:00:00"


@dataclass
class Config:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        t, d = self.train, self.data
        if t.ablation not in ABLATIONS:
            raise ConfigError(f"train.ablation must be one of {ABLATIONS}, got {t.ablation!r}")
        if t.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if t.warmup_epochs >= t.total_epochs:
            raise ConfigError("train.warmup_epochs must be smaller than train.total_epochs")
        if min(t.mu) < 0:
            raise ConfigError("mu_r, mu_f, mu_s must be non-negative")
        if not 0 < t.K <= 1:
            raise ConfigError("train.K must lie in (0, 1]")
        if t.k_c < 1 or t.batch_size < 1:
            raise ConfigError("train.k_c and train.batch_size must be >= 1")
        if d.adjacency.kind not in ADJACENCY_KINDS:
            raise ConfigError(f"data.adjacency.kind must be one of {ADJACENCY_KINDS}")
        if d.missing_policy not in MISSING_POLICIES:
            raise ConfigError(f"data.missing_policy must be one of {MISSING_POLICIES}")
        if d.format not in ("wide", "long"):
            raise ConfigError("data.format must be 'wide' or 'long'")
        if d.norm not in ("standard", "none"):
            raise ConfigError("data.norm must be 'standard' or 'none'")
        if self.model.recognizer_arch not in ("gcn3", "linear3"):
            raise ConfigError("model.recognizer_arch must be 'gcn3' or 'linear3'")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _leaf_paths(cls, prefix=""):
    out = []
    for f in dataclasses.fields(cls):
        path = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING else None):
            out.extend(_leaf_paths(f.default_factory, path + "."))
        else:
            out.append(path)
    return out


def _build(cls, data, prefix=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = names[name]
        factory = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if factory is not None and dataclasses.is_dataclass(factory):
            kwargs[name] = _build(factory, value, prefix + name + ".")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> Config:
    return _build(Config, data)


def _resolve_key(key: str) -> list[str]:
    leaves = _leaf_paths(Config)
    if key in leaves:
        return key.split(".")
    # a unique dotted suffix is enough, e.g. "mu_f" or "adjacency.kind"
    matches = [p for p in leaves if p.endswith("." + key)]
    if len(matches) == 1:
        return matches[0].split(".")
    if not matches:
        raise ConfigError(f"unknown config key: {key}")
    raise ConfigError(f"ambiguous config key {key!r}; use one of {matches}")


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, text = item.split("=", 1)
        path = _resolve_key(key.strip())
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value for {key}: {exc}") from exc
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key} collides with a scalar")
        node[path[-1]] = value
    return raw


def load_config(path=None, overrides=None, env=None) -> Config:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    raw = apply_overrides(raw, overrides)
    env = os.environ if env is None else env
    if env.get("FAIRSTG_SEED"):
        try:
            raw["seed"] = int(env["FAIRSTG_SEED"])
        except ValueError as exc:
            raise ConfigError("FAIRSTG_SEED must be an integer") from exc
    return from_dict(raw).validate()


def dump_config(cfg: Config, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
