"""Self-supervised fairness recognizer: error-rank labels and a difficulty classifier."""
from __future__ import annotations

import math

import torch
from torch import nn

from .backbone import AdaptiveAdjacency, GraphConv, gather_dense, group_by_window, scatter_dense
from .data import ExternalEncoder, NormalizationState


def easy_count(m, k=0.2):
    # tolerance guards float products such as 0.2 * 15 = 3.0000000000000004
    return max(1, math.ceil(k * m - 1e-9)) if m > 0 else 0


def partition_easy_challenging(errors: torch.Tensor, k=0.2) -> torch.Tensor:
    """Label the ceil(k*M) smallest errors easy (1), the rest challenging (0).

    Ties go to the lower sample index.
    """
    errors = errors.detach().reshape(-1)
    order = torch.sort(errors, stable=True).indices
    z = torch.zeros_like(errors)
    z[order[: easy_count(errors.numel(), k)]] = 1.0
    return z


def classify(z_hat: torch.Tensor, threshold=0.5) -> torch.Tensor:
    """Predicted-easy mask: z_hat >= threshold."""
    return z_hat >= threshold


def recognizer_accuracy(z_hat, z, threshold=0.5) -> float:
    pred = classify(torch.as_tensor(z_hat), threshold)
    truth = torch.as_tensor(z) > 0.5
    if truth.numel() == 0:
        return float("nan")
    return (pred == truth).double().mean().item()


class FairnessRecognizer(nn.Module):
    """Predicts z_hat in (0, 1) from c_i = [x_st; e_i; mu_i; sigma2_i].

    ``arch="gcn3"`` stacks three adaptive-topology graph convolutions over the
    nodes sharing a window start; ``arch="linear3"`` is a three-layer MLP.
    """

    def __init__(self, n_nodes, d, norm: NormalizationState, arch="gcn3", hidden=64, d_emb=10,
                 weekday_dim=4, node_dim=8, init_scale=0.1):
        super().__init__()
        self.n_nodes = n_nodes
        self.arch = arch
        self.external = ExternalEncoder(n_nodes, weekday_dim, node_dim)
        self.d_c = d + self.external.out_dim + 2
        self.register_buffer("mean", torch.tensor(float(norm.mean)))
        self.register_buffer("std", torch.tensor(float(norm.std)))
        if arch == "gcn3":
            self.adjacency = AdaptiveAdjacency(n_nodes, d_emb, init_scale)
            self.layers = nn.ModuleList([
                GraphConv(self.d_c, hidden),
                GraphConv(hidden, hidden),
                GraphConv(hidden, 1, activation=False, bias=True),
            ])
        elif arch == "linear3":
            self.mlp = nn.Sequential(
                nn.Linear(self.d_c, hidden), nn.ReLU(),
                nn.Linear(hidden, hidden), nn.ReLU(),
                nn.Linear(hidden, 1),
            )
        else:
            raise ValueError(f"unknown recognizer arch {arch!r}")

    @property
    def final_layer(self):
        return self.layers[-1] if self.arch == "gcn3" else self.mlp[-1]

    def context(self, x_st, batch):
        """Assemble C; window statistics are rescaled into normalized units."""
        e = self.external(batch.time_of_day, batch.weekday, batch.node_index)
        mu = (batch.stats_mean - self.mean) / self.std
        var = batch.stats_var / self.std**2
        return torch.cat([x_st, e, mu.unsqueeze(-1), var.unsqueeze(-1)], dim=-1)

    def forward_context(self, c, node_index, window_start):
        if c.shape[-1] != self.d_c:
            raise ValueError(f"expected context width {self.d_c}, got {c.shape[-1]}")
        if self.arch == "linear3":
            logit = self.mlp(c)
        else:
            flat, g = group_by_window(node_index, window_start, self.n_nodes)
            h, mask = scatter_dense(c, flat, g, self.n_nodes)
            adj = self.adjacency()
            prop = adj + torch.eye(adj.shape[0], dtype=adj.dtype, device=adj.device)
            for layer in self.layers:
                h = layer(h, prop) * mask.unsqueeze(-1)
            logit = gather_dense(h, flat)
        return torch.sigmoid(logit.squeeze(-1))

    def forward(self, x_st, batch):
        return self.forward_context(self.context(x_st, batch), batch.node_index, batch.window_start)
