"""Spatiotemporal feature extractor, adaptive topology and output head.

Any extractor plugged into :class:`~fairstg.model.FairSTG` must be an
``nn.Module`` exposing ``out_dim`` and ``forward(batch) -> (M, out_dim)``,
one representation row per sample of the :class:`~fairstg.data.SampleBatch`.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .data import AdjacencySpec, NormalizationState


def adaptive_adjacency(e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
    """ReLU(tanh(E1 E2^T - E2 E1^T)); skew-symmetric pre-activation keeps edges one-way."""
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {tuple(e1.shape)} vs {tuple(e2.shape)}")
    return torch.relu(torch.tanh(e1 @ e2.T - e2 @ e1.T))


def gcn_layer(h_prev, e1, e2, weight):
    """One graph convolution with adaptive topology: ReLU((I + A) H W)."""
    adj = adaptive_adjacency(e1, e2)
    if h_prev.shape[-2] != adj.shape[0] or h_prev.shape[-1] != weight.shape[0]:
        raise ValueError("gcn_layer: incompatible shapes")
    prop = adj + torch.eye(adj.shape[0], dtype=adj.dtype, device=adj.device)
    return torch.relu(prop @ h_prev @ weight)


class AdaptiveAdjacency(nn.Module):
    def __init__(self, n_nodes, embed_dim=10, init_scale=0.5):
        super().__init__()
        if embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        self.e1 = nn.Parameter(torch.empty(n_nodes, embed_dim).uniform_(-init_scale, init_scale))
        self.e2 = nn.Parameter(torch.empty(n_nodes, embed_dim).uniform_(-init_scale, init_scale))

    def forward(self):
        return adaptive_adjacency(self.e1, self.e2)


class Propagation(nn.Module):
    """Produces the N x N propagation matrix I + A for either adjacency kind."""

    def __init__(self, n_nodes, spec: AdjacencySpec):
        super().__init__()
        self.kind = spec.kind
        if spec.kind == "adaptive":
            self.adaptive = AdaptiveAdjacency(n_nodes, spec.embed_dim)
        else:
            w = torch.as_tensor(spec.fixed_weights, dtype=torch.float32).clone()
            if w.shape[0] != n_nodes:
                raise ValueError("fixed adjacency size does not match node count")
            w.fill_diagonal_(0.0)
            rows = w.sum(dim=1, keepdim=True)
            w = torch.where(rows > 0, w / rows.clamp_min(1e-12), w)
            self.register_buffer("fixed", w)

    def forward(self):
        adj = self.adaptive() if self.kind == "adaptive" else self.fixed
        return adj + torch.eye(adj.shape[0], dtype=adj.dtype, device=adj.device)


class GraphConv(nn.Module):
    def __init__(self, d_in, d_out, activation=True, bias=False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out))
        nn.init.xavier_uniform_(self.weight)
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None
        self.activation = activation

    def forward(self, h, prop):
        out = prop @ h @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return torch.relu(out) if self.activation else out


def group_by_window(node_index, window_start, n_nodes):
    """Map each sample to a slot in a dense (G, N) grid of (window_start, node)."""
    starts, inverse = torch.unique(window_start, sorted=True, return_inverse=True)
    flat = inverse * n_nodes + node_index
    if torch.unique(flat).numel() != flat.numel():
        raise ValueError("duplicate (node_index, window_start) pairs in batch")
    return flat, starts.numel()


def scatter_dense(x, flat, n_groups, n_nodes):
    dense = x.new_zeros((n_groups * n_nodes,) + tuple(x.shape[1:]))
    dense[flat] = x
    mask = torch.zeros(n_groups * n_nodes, dtype=x.dtype, device=x.device)
    mask[flat] = 1.0
    return dense.view((n_groups, n_nodes) + tuple(x.shape[1:])), mask.view(n_groups, n_nodes)


def gather_dense(dense, flat):
    return dense.reshape((-1,) + tuple(dense.shape[2:]))[flat]


class TemporalBlock(nn.Module):
    def __init__(self, channels, dilation, kernel=3):
        super().__init__()
        self.pad = (kernel - 1) * dilation
        self.conv = nn.Conv2d(channels, channels, (1, kernel), dilation=(1, dilation))
        self.gcn = GraphConv(channels, channels)

    def forward(self, x, prop, mask):
        # x: (G, C, N, L); causal left padding keeps L
        t = torch.relu(self.conv(F.pad(x, (self.pad, 0)))) * mask[:, None, :, None]
        s = self.gcn(t.permute(0, 3, 2, 1), prop).permute(0, 3, 2, 1)
        return (s + x) * mask[:, None, :, None]


class ReferenceExtractor(nn.Module):
    """Two dilated temporal convolutions (dilation 1, 2), each followed by graph mixing."""

    def __init__(self, n_nodes, w, adjacency: AdjacencySpec, d=64, channels=32):
        super().__init__()
        self.n_nodes = n_nodes
        self.out_dim = d
        self.propagation = Propagation(n_nodes, adjacency)
        self.start = nn.Conv2d(1, channels, (1, 1))
        self.blocks = nn.ModuleList([TemporalBlock(channels, 1), TemporalBlock(channels, 2)])
        self.proj = nn.Linear(channels * w, d)

    def forward(self, batch):
        if len(batch) == 0:
            raise ValueError("empty batch")
        flat, g = group_by_window(batch.node_index, batch.window_start, self.n_nodes)
        dense, mask = scatter_dense(batch.inputs, flat, g, self.n_nodes)  # (G, N, w)
        prop = self.propagation()
        x = self.start(dense.unsqueeze(1)) * mask[:, None, :, None]
        for block in self.blocks:
            x = block(x, prop, mask)
        feats = x.permute(0, 2, 1, 3).flatten(2)  # (G, N, C*w)
        return self.proj(gather_dense(feats, flat))


class OutputHead(nn.Module):
    """Two pointwise transforms d -> d -> h, then de-normalization to raw units."""

    def __init__(self, d, h, norm: NormalizationState):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, h)
        self.register_buffer("mean", torch.tensor(float(norm.mean)))
        self.register_buffer("std", torch.tensor(float(norm.std)))

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x))) * self.std + self.mean
