"""Loss terms: reweighted MAE, error-variance penalty, weighted BCE, and their sum."""
from __future__ import annotations

from dataclasses import dataclass

import torch

BCE_EPS = 1e-7


def per_sample_mae(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over the horizon, one value per sample."""
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(truth.shape)}")
    # sign(0) = 0 gives the zero subgradient at exact equality
    return (pred - truth).abs().mean(dim=-1)


def cost_sensitive_weights(errors: torch.Tensor) -> torch.Tensor:
    """lambda_i = 1 + e_i / sum_j e_j, detached; all ones when every error is zero."""
    e = errors.detach()
    total = e.sum()
    if total <= 0:
        return torch.ones_like(e)
    return 1.0 + e / total


def reweighted_loss(errors, weights=None):
    if weights is None:
        weights = cost_sensitive_weights(errors)
    return (weights.detach() * errors).mean()


def fairness_loss(errors):
    """Population variance of the per-sample errors."""
    return ((errors - errors.mean()) ** 2).mean()


def weighted_bce(z_hat, z, omega=4.0):
    p = z_hat.clamp(BCE_EPS, 1 - BCE_EPS)
    return -(omega * z * torch.log(p) + (1 - z) * torch.log(1 - p)).mean()


@dataclass
class LossBreakdown:
    l_r: torch.Tensor
    l_f: torch.Tensor
    l_s: torch.Tensor
    total: torch.Tensor
    weights: tuple

    def as_floats(self):
        return {k: float(getattr(self, k).detach()) for k in ("l_r", "l_f", "l_s", "total")}


def combine(l_r, l_f, l_s, mu=(1.0, 0.5, 0.1)) -> LossBreakdown:
    mu_r, mu_f, mu_s = (float(m) for m in mu)
    if min(mu_r, mu_f, mu_s) < 0:
        raise ValueError("loss weights must be non-negative")
    l_r, l_f, l_s = (torch.as_tensor(x, dtype=torch.float64) if not torch.is_tensor(x) else x for x in (l_r, l_f, l_s))
    total = mu_r * l_r
    # skip zero-weighted terms so they cannot inject non-finite values
    if mu_f:
        total = total + mu_f * l_f
    if mu_s:
        total = total + mu_s * l_s
    return LossBreakdown(l_r, l_f, l_s, total, (mu_r, mu_f, mu_s))
