"""Label-query attention pooling and the auxiliary info classifier."""
from __future__ import annotations

from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import MODALITIES

PROB_EPS = 1e-7


def check_binary(labels: torch.Tensor) -> None:
    if not torch.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary (0/1)")


def bce(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy on probabilities, mean over labels then samples."""
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch {tuple(probs.shape)} vs {tuple(labels.shape)}")
    check_binary(labels)
    p = probs.clamp(PROB_EPS, 1 - PROB_EPS)
    return -(labels * torch.log(p) + (1 - labels) * torch.log1p(-p)).mean()


def bce_with_logits(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if logits.shape != labels.shape:
        raise ValueError(f"shape mismatch {tuple(logits.shape)} vs {tuple(labels.shape)}")
    check_binary(labels)
    return F.binary_cross_entropy_with_logits(logits, labels, reduction="mean")


def loss_dir(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return bce(probs, labels)


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries get 0.

    ``logits`` is [..., q, s] and ``mask`` is [..., s].
    """
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("sequence with no valid frames; nothing to attend to")
    logits = logits.masked_fill(~mask[..., None, :], float("-inf"))
    return torch.softmax(logits, dim=-1)


class EmotionSpace(nn.Module):
    """Trainable label embeddings that pool per-label features from each modality.

    With ``use_label_queries=False`` the label queries are replaced by a
    small MLP scoring each frame for every label (the no-embedding ablation).
    """

    def __init__(self, q: int, width: int, d_h: int = 128, proj_dim: int = 256,
                 label_dim: Optional[int] = None, use_label_queries: bool = True):
        super().__init__()
        if d_h % 2:
            raise ValueError("emotion_space.d_h must be even")
        self.q = q
        self.d_h = d_h
        self.use_label_queries = use_label_queries
        label_dim = label_dim or proj_dim
        if use_label_queries:
            self.labels = nn.Parameter(torch.randn(q, label_dim) * label_dim ** -0.5)
            self.label_proj = nn.Linear(label_dim, proj_dim)
        else:
            self.scorers = nn.ModuleDict({
                m: nn.Sequential(nn.Linear(proj_dim, proj_dim), nn.GELU(),
                                 nn.Linear(proj_dim, q))
                for m in MODALITIES})
        self.frame_proj = nn.ModuleDict({m: nn.Linear(width, proj_dim) for m in MODALITIES})
        self.out = nn.ModuleDict({m: nn.Linear(proj_dim, d_h) for m in MODALITIES})

    def attention(self, modality: str, frames: torch.Tensor,
                  mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (A, projected frames) for one modality; A is [B, q, s]."""
        proj = self.frame_proj[modality](frames)
        if self.use_label_queries:
            queries = self.label_proj(self.labels)
            logits = torch.einsum("qd,bsd->bqs", queries, proj)
        else:
            logits = self.scorers[modality](proj).transpose(1, 2)
        return masked_softmax(logits, mask), proj

    def attend(self, modality: str, frames: torch.Tensor, mask: torch.Tensor):
        attn, proj = self.attention(modality, frames, mask)
        return self.out[modality](attn @ proj), attn

    def forward(self, encoded: Dict[str, torch.Tensor], masks: Dict[str, torch.Tensor]):
        feats, maps = {}, {}
        for m in MODALITIES:
            feats[m], maps[m] = self.attend(m, encoded[m], masks[m])
        return feats, maps


class InfoClassifier(nn.Module):
    """Two-layer perceptron over the flattened per-label features of all modalities."""

    def __init__(self, q: int, d_h: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(3 * q * d_h, hidden), nn.GELU(),
                                 nn.Linear(hidden, q))

    def forward(self, feats: Dict[str, torch.Tensor]) -> torch.Tensor:
        """Return logits [B, q]; probabilities are their sigmoid."""
        f_dir = torch.cat([feats[m].flatten(1) for m in MODALITIES], dim=1)
        return self.net(f_dir)


def info_classify(feats: Dict[str, torch.Tensor], classifier: InfoClassifier) -> torch.Tensor:
    return torch.sigmoid(classifier(feats))
