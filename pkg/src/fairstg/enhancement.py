"""Collaborative feature enhancement: compensatory retrieval and gated mix-up."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
from torch import nn

log = logging.getLogger(__name__)


def similarity_matrix(x_st: torch.Tensor, easy: torch.Tensor) -> torch.Tensor:
    """Cosine similarity masked to easy columns and off-diagonal entries."""
    norms = x_st.norm(dim=1, keepdim=True)
    zero = norms.squeeze(1) == 0
    if zero.any():
        log.debug("%d zero-norm representations; similarity 0", int(zero.sum()))
    unit = x_st / torch.where(norms > 0, norms, torch.ones_like(norms))
    s = (unit @ unit.T).clamp(-1.0, 1.0)
    keep = easy.bool().unsqueeze(0).expand_as(s).clone()
    keep.fill_diagonal_(False)
    return torch.where(keep, s, torch.zeros_like(s))


def retrieve_all(s: torch.Tensor, easy: torch.Tensor, rows: torch.Tensor, k_c=5) -> torch.Tensor:
    """Top-k_c easy columns for each row in ``rows``; ties go to the lower index."""
    easy = easy.bool()
    n_easy = int(easy.sum())
    if n_easy == 0:
        raise ValueError("no easy samples to retrieve from")
    k = min(k_c, n_easy)
    key = s.detach()[rows]
    key = torch.where(easy.unsqueeze(0), key, torch.full_like(key, -math.inf))
    order = torch.sort(key, dim=1, descending=True, stable=True).indices
    return order[:, :k]


def retrieve_compensatory(s, i, easy, k_c=5) -> list[int]:
    return retrieve_all(s, easy, torch.tensor([i]), k_c)[0].tolist()


def aggregate_compensatory(neighbors: torch.Tensor) -> torch.Tensor:
    """Mean-pool over the neighbor axis (second to last)."""
    if neighbors.shape[-2] < 1:
        raise ValueError("need at least one compensatory sample")
    return neighbors.mean(dim=-2)


def mix_representations(x_st, u_st, alpha):
    alpha = torch.as_tensor(alpha, dtype=x_st.dtype)
    if alpha.dim() == 1 and x_st.dim() == 2:
        alpha = alpha.unsqueeze(-1)
    return (1 - alpha) * x_st + alpha * u_st


class MixupGate(nn.Module):
    """alpha' = 0.5 * sigmoid(MLP(softmax(Q*K/sqrt(d_k)) * K)), Q = x W_q, K = u W_k.

    The softmax runs over the d_k projection axis; the attended key vector is
    what the MLP sees, since the attention weights live in d_k space.
    """

    def __init__(self, d=64, d_k=32):
        super().__init__()
        self.d_k = d_k
        self.w_q = nn.Linear(d, d_k, bias=False)
        self.w_k = nn.Linear(d, d_k, bias=False)
        self.mlp = nn.Sequential(nn.Linear(d_k, d_k), nn.ReLU(), nn.Linear(d_k, 1))

    def forward(self, x_st, u_st):
        q = self.w_q(x_st)
        k = self.w_k(u_st)
        attn = torch.softmax(q * k / math.sqrt(self.d_k), dim=-1)
        return 0.5 * torch.sigmoid(self.mlp(attn * k).squeeze(-1))


@dataclass
class EnhancementInfo:
    challenging: torch.Tensor  # indices into the batch
    neighbors: torch.Tensor  # (n_challenging, k) batch indices
    alpha: torch.Tensor  # (n_challenging,)


class CollaborativeEnhancement(nn.Module):
    def __init__(self, d=64, d_k=32, k_c=5):
        super().__init__()
        self.k_c = k_c
        self.gate = MixupGate(d, d_k)

    def forward(self, x_st, easy):
        easy = easy.bool()
        challenging = torch.nonzero(~easy).squeeze(1)
        empty = EnhancementInfo(challenging[:0], challenging.new_zeros((0, 0)), x_st.new_zeros(0))
        if challenging.numel() == 0:
            return x_st, empty
        if not easy.any():
            log.info("no easy samples in batch; enhancement skipped")
            # alpha 0: nothing is mixed in
            return x_st, EnhancementInfo(challenging, challenging.new_zeros((challenging.numel(), 0)),
                                         x_st.new_zeros(challenging.numel()))
        s = similarity_matrix(x_st, easy)
        neighbors = retrieve_all(s, easy, challenging, self.k_c)
        u = aggregate_compensatory(x_st[neighbors])
        x_c = x_st[challenging]
        alpha = self.gate(x_c, u)
        out = x_st.index_copy(0, challenging, mix_representations(x_c, u, alpha))
        return out, EnhancementInfo(challenging, neighbors, alpha)
