"""The FairSTG network: extractor, recognizer, enhancement and output head."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import OutputHead, ReferenceExtractor
from .config import ModelConfig
from .data import AdjacencySpec, NormalizationState
from .enhancement import CollaborativeEnhancement, EnhancementInfo
from .recognizer import FairnessRecognizer, classify


@dataclass
class Forward:
    pred: torch.Tensor
    x_st: torch.Tensor
    z_hat: torch.Tensor | None = None
    easy: torch.Tensor | None = None
    info: EnhancementInfo | None = None


class FairSTG(nn.Module):
    def __init__(self, n_nodes, w, h, norm: NormalizationState, adjacency: AdjacencySpec,
                 cfg: ModelConfig | None = None, k_c=5, extractor: nn.Module | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.n_nodes, self.w, self.h = n_nodes, w, h
        self.backbone = extractor or ReferenceExtractor(n_nodes, w, adjacency, cfg.d, cfg.channels)
        d = self.backbone.out_dim
        self.head = OutputHead(d, h, norm)
        self.recognizer = FairnessRecognizer(
            n_nodes, d, norm, cfg.recognizer_arch, cfg.recognizer_hidden, cfg.d_emb,
            cfg.weekday_embed_dim, cfg.node_embed_dim,
        )
        self.enhancement = CollaborativeEnhancement(d, cfg.d_k, k_c)
        # set by the trainer once a fairness stage with enhancement has run
        self.register_buffer("enhance_at_inference", torch.tensor(False))

    def forward(self, batch, enhance=None, threshold=0.5) -> Forward:
        """Inference path; the easy set comes from the recognizer's predictions."""
        if enhance is None:
            enhance = bool(self.enhance_at_inference)
        x_st = self.backbone(batch)
        z_hat = self.recognizer(x_st, batch)
        if not enhance:
            return Forward(self.head(x_st), x_st, z_hat)
        easy = classify(z_hat, threshold)
        x_com, info = self.enhancement(x_st, easy)
        return Forward(self.head(x_com), x_st, z_hat, easy, info)
