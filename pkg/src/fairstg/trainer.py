"""Two-stage training: warm-up under plain MAE, then the fairness-aware objective."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, ModelConfig, TrainConfig
from .data import AdjacencySpec, NormalizationState, PreparedData, WindowSet, iter_batches
from .errors import TrainingError
from .evaluation import MetricAccumulator
from .model import FairSTG
from .objectives import (
    combine,
    cost_sensitive_weights,
    fairness_loss,
    per_sample_mae,
    reweighted_loss,
    weighted_bce,
)
from .recognizer import partition_easy_challenging

log = logging.getLogger(__name__)

WARMUP, FAIRNESS = "warmup", "fairness"


def stage_for_epoch(epoch, cfg: TrainConfig):
    """Stage of a 0-indexed epoch."""
    if not cfg.fairness or epoch < cfg.warmup_epochs:
        return WARMUP
    return FAIRNESS


def uses_enhancement(cfg: TrainConfig):
    return cfg.fairness and cfg.ablation != "no_fe"


def compute_loss(model: FairSTG, batch, cfg: TrainConfig, stage):
    """Forward pass and loss for one training batch. Returns ``(LossBreakdown, errors)``."""
    x_st = model.backbone(batch)
    errors = per_sample_mae(model.head(x_st), batch.targets)
    zero = errors.new_zeros(())

    if stage == WARMUP:
        return combine(errors.mean(), fairness_loss(errors.detach()), zero, (cfg.mu_r, 0.0, 0.0)), errors

    mu_r, mu_f, mu_s = cfg.mu
    l_s = zero
    if cfg.ablation != "no_fe":
        # labels come from the un-enhanced errors
        z = partition_easy_challenging(errors, cfg.K)
        z_hat = model.recognizer(x_st, batch)
        l_s = weighted_bce(z_hat, z, cfg.omega)
        x_com, _ = model.enhancement(x_st, z.bool())
        errors = per_sample_mae(model.head(x_com), batch.targets)
    else:
        mu_s = 0.0

    if cfg.ablation == "no_fo":
        l_r = errors.mean()
        mu_f = 0.0
    else:
        l_r = reweighted_loss(errors, cost_sensitive_weights(errors))
    l_f = fairness_loss(errors)
    return combine(l_r, l_f, l_s, (mu_r, mu_f, mu_s)), errors


def train_step(model, optimizer, batch, cfg: TrainConfig, stage):
    model.train()
    optimizer.zero_grad(set_to_none=True)
    losses, errors = compute_loss(model, batch, cfg, stage)
    if not torch.isfinite(losses.total):
        raise TrainingError(
            f"non-finite loss in {stage} stage: {losses.as_floats()}; batch of {len(batch)} samples, "
            f"window starts {int(batch.window_start.min())}..{int(batch.window_start.max())}"
        )
    losses.total.backward()
    params = [p for p in model.parameters() if p.grad is not None]
    grad_norm = float(torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip))
    optimizer.step()
    return losses, errors.detach(), grad_norm


@torch.no_grad()
def predict(model: FairSTG, ws: WindowSet, norm, batch_size=64, k=0.2, threshold=0.5, enhance=None,
            dtype=torch.float32, on_batch=None) -> MetricAccumulator:
    """Run inference over a split; z labels are recomputed per batch from un-enhanced errors."""
    model.eval()
    acc = MetricAccumulator()
    for b, batch in enumerate(iter_batches(ws, batch_size, norm, dtype=dtype)):
        out = model(batch, enhance=enhance, threshold=threshold)
        plain = per_sample_mae(model.head(out.x_st), batch.targets)
        z = partition_easy_challenging(plain, k)
        acc.update(out.pred.numpy(), batch.targets.numpy(), batch.node_index.numpy(), z.numpy(), out.z_hat.numpy())
        if on_batch is not None:
            on_batch(b, batch, out)
    return acc


@dataclass
class TrainState:
    epoch: int  # epochs completed
    model_state: dict
    optim_state: dict
    rng_state: dict
    best_val: float
    best_state: dict | None
    stale: int = 0


@dataclass
class TrainResult:
    model: FairSTG
    best_val_mae: float
    history: list = field(default_factory=list)
    warmup_state: TrainState | None = None
    checkpoint: Path | None = None


def build_model(cfg: Config, n_nodes, norm: NormalizationState, adjacency: AdjacencySpec, extractor=None):
    return FairSTG(n_nodes, cfg.data.w, cfg.data.h, norm, adjacency, cfg.model, cfg.train.k_c, extractor)


def _snapshot(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def checkpoint_header(cfg: Config, model: FairSTG, norm, data: PreparedData | None = None):
    header = {
        "d": model.backbone.out_dim,
        "d_emb": cfg.model.d_emb,
        "h": model.h,
        "w": model.w,
        "N": model.n_nodes,
        "norm": {"mean": norm.mean, "std": norm.std},
        "adjacency_kind": cfg.data.adjacency.kind,
        "config": cfg.to_dict(),
    }
    if data is not None:
        header["node_ids"] = list(data.raw.node_ids)
    return header


def load_model(path, extractor=None):
    """Rebuild a FairSTG from a checkpoint. Returns ``(model, header)``."""
    from .config import from_dict

    state, header = load_checkpoint(path)
    cfg = from_dict(header["config"])
    norm = NormalizationState(**header["norm"])
    n = header["N"]
    if header["adjacency_kind"] == "adaptive":
        spec = AdjacencySpec.adaptive(header["d_emb"])
    else:
        spec = AdjacencySpec.fixed(np.zeros((n, n)))
    model = build_model(cfg, n, norm, spec, extractor)
    model.load_state_dict(state)
    model.eval()
    return model, header


def run_training(cfg: Config, data: PreparedData, out_dir=None, resume: TrainState | None = None,
                 extractor=None, echo=print) -> TrainResult:
    """Train per ``cfg``; keeps the parameters with the best validation MAE.

    The best-so-far tracker restarts when the fairness stage begins, and early
    stopping (``train.patience``) applies to that stage only. ``resume`` continues
    from a state captured at the end of warm-up.
    """
    t = cfg.train
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, data.raw.n_nodes, data.norm, data.adjacency, extractor)
    optimizer = torch.optim.Adam(model.parameters(), lr=t.lr)
    best_val, best_state, stale, start = math.inf, None, 0, 0
    if resume is not None:
        model.load_state_dict(resume.model_state)
        optimizer.load_state_dict(resume.optim_state)
        rng.bit_generator.state = copy.deepcopy(resume.rng_state)
        best_val, best_state, stale, start = resume.best_val, resume.best_state, resume.stale, resume.epoch

    out_dir = Path(out_dir) if out_dir is not None else None
    log_rows = []
    history = []
    warmup_state = None
    eval_bs = max(t.batch_size, 64)

    for epoch in range(start, t.total_epochs):
        if epoch == t.warmup_epochs and warmup_state is None:
            warmup_state = TrainState(epoch, _snapshot(model), copy.deepcopy(optimizer.state_dict()),
                                      copy.deepcopy(rng.bit_generator.state), best_val, best_state, stale)
        stage = stage_for_epoch(epoch, t)
        if stage == FAIRNESS and epoch == t.warmup_epochs:
            best_val, best_state, stale = math.inf, None, 0
            if uses_enhancement(t):
                model.enhance_at_inference.fill_(True)
        sums = np.zeros(4)
        n_batches, mae_sum, n_samples = 0, 0.0, 0
        for batch in iter_batches(data.train, t.batch_size, data.norm, shuffle=True, rng=rng):
            losses, errors, _ = train_step(model, optimizer, batch, t, stage)
            f = losses.as_floats()
            sums += [f["l_r"], f["l_f"], f["l_s"], f["total"]]
            n_batches += 1
            mae_sum += float(errors.sum())
            n_samples += errors.numel()
        val = predict(model, data.val, data.norm, eval_bs, t.K, t.threshold).report(
            data.raw.n_nodes, horizons=(), eps=cfg.data.mape_epsilon)
        val_mae, val_var = val["overall"]["mae"], val["overall"]["mae_var"]
        means = sums / max(n_batches, 1)
        row = {"epoch": epoch + 1, "stage": stage, "l_r": means[0], "l_f": means[1], "l_s": means[2],
               "total": means[3]}
        log_rows.append(row)
        history.append({**row, "train_mae": mae_sum / max(n_samples, 1), "val_mae": val_mae, "val_mae_var": val_var})
        if echo is not None:
            echo(f"epoch={epoch + 1} stage={stage} train_mae={mae_sum / max(n_samples, 1):.6f} "
                 f"val_mae={val_mae:.6f} mae_var={val_var:.6f}")
        if val_mae < best_val:
            best_val, best_state, stale = val_mae, _snapshot(model), 0
        else:
            stale += 1
        if stage == FAIRNESS and stale >= t.patience:
            log.info("early stopping after epoch %d", epoch + 1)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    result = TrainResult(model, best_val, history, warmup_state)

    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            with open(out_dir / "train_log.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=["epoch", "stage", "l_r", "l_f", "l_s", "total"])
                writer.writeheader()
                writer.writerows(log_rows)
            ckpt = out_dir / "checkpoint.fstg"
            save_checkpoint(ckpt, model.state_dict(), checkpoint_header(cfg, model, data.norm, data))
        except OSError as exc:
            raise OSError(f"failed writing training outputs under {out_dir}: {exc}") from exc
        result.checkpoint = ckpt
    return result
