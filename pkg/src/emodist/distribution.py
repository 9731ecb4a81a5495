"""Gaussian latent heads, normalized distribution vectors, contrast queue and SupCon loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import MODALITIES

SIGMA_FLOOR = 1e-6
NORM_EPS = 1e-12


@dataclass
class LatentDistributionSet:
    """Per-modality means and scales, each tensor shaped [B, q, d_h / 2]."""

    mu: Dict[str, torch.Tensor]
    sigma: Dict[str, torch.Tensor]

    def concat_sigma(self) -> torch.Tensor:
        """All scale components of a sample, flattened: [B, 3 * q * d_h / 2]."""
        return torch.cat([self.sigma[m].flatten(1) for m in MODALITIES], dim=1)

    def validate(self) -> None:
        for m in MODALITIES:
            if not (torch.isfinite(self.mu[m]).all() and torch.isfinite(self.sigma[m]).all()):
                raise ValueError(f"non-finite latent parameters for {m}")
            if not bool((self.sigma[m] > 0).all()):
                raise ValueError(f"non-positive scale for {m}")


class GaussianHead(nn.Module):
    """Shared MLP encoder followed by separate mean and scale layers."""

    def __init__(self, d_h: int):
        super().__init__()
        self.encoder = nn.Sequential(nn.Linear(d_h, d_h), nn.GELU())
        self.mu = nn.Linear(d_h, d_h // 2)
        self.sigma = nn.Linear(d_h, d_h // 2)

    def forward(self, z: torch.Tensor):
        h = self.encoder(z)
        return self.mu(h), F.softplus(self.sigma(h)) + SIGMA_FLOOR


class Decoupler(nn.Module):
    def __init__(self, d_h: int):
        super().__init__()
        if d_h % 2:
            raise ValueError("d_h must be even")
        self.heads = nn.ModuleDict({m: GaussianHead(d_h) for m in MODALITIES})

    def forward(self, feats: Dict[str, torch.Tensor]) -> LatentDistributionSet:
        mu, sigma = {}, {}
        for m in MODALITIES:
            if not torch.isfinite(feats[m]).all():
                raise ValueError(f"non-finite label features for {m}")
            mu[m], sigma[m] = self.heads[m](feats[m])
        return LatentDistributionSet(mu, sigma)


def decouple(feats, decoupler: Decoupler) -> LatentDistributionSet:
    return decoupler(feats)


def to_vector(mu: torch.Tensor, sigma: Optional[torch.Tensor] = None, *,
              strict: bool = False, keep: str = "both") -> torch.Tensor:
    """Concatenate the separately L2-normalized mean and scale along the last axis.

    ``keep`` selects "both", "mu" or "sigma" for the centre/scale-only ablations.
    """
    parts = []
    for name, x in (("mu", mu), ("sigma", sigma)):
        if keep not in ("both", name):
            continue
        norm = x.norm(dim=-1, keepdim=True)
        if strict and bool((norm == 0).any()):
            raise ValueError(f"zero-norm {name} cannot be normalized")
        parts.append(x / (norm + NORM_EPS))
    return torch.cat(parts, dim=-1)


def similarity(e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
    return e1 @ e2.transpose(-1, -2)


class ContrastQueue:
    """FIFO memory of detached distribution vectors with their identities.

    ``cluster`` is ``modality * q + label`` and ``positive`` marks whether the
    source sample carried that label.
    """

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        self.capacity = int(capacity)
        self.dim = dim
        self.vectors = torch.empty(0, dim, dtype=dtype)
        self.cluster = torch.empty(0, dtype=torch.long)
        self.positive = torch.empty(0, dtype=torch.bool)
        self.sample = torch.empty(0, dtype=torch.long)
        self.pushes = 0

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def push(self, vectors, cluster, positive, sample=None) -> "ContrastQueue":
        if self.capacity <= 0:
            return self
        vectors = vectors.detach().clone().to(self.vectors.dtype)
        if sample is None:
            sample = torch.full((vectors.shape[0],), -1, dtype=torch.long)
        self.vectors = torch.cat([self.vectors, vectors])[-self.capacity:]
        self.cluster = torch.cat([self.cluster, cluster.long().clone()])[-self.capacity:]
        self.positive = torch.cat([self.positive, positive.bool().clone()])[-self.capacity:]
        self.sample = torch.cat([self.sample, sample.long().clone()])[-self.capacity:]
        self.pushes += 1
        return self

    def snapshot(self):
        return self.vectors, self.cluster, self.positive

    def state_dict(self) -> dict:
        return {"vectors": self.vectors, "cluster": self.cluster,
                "positive": self.positive, "sample": self.sample}

    def load_state_dict(self, state: dict) -> None:
        self.vectors = state["vectors"].clone()
        self.cluster = state["cluster"].clone()
        self.positive = state["positive"].clone()
        self.sample = state["sample"].clone()


def queue_push(queue: ContrastQueue, vectors, cluster, positive, sample=None) -> ContrastQueue:
    return queue.push(vectors, cluster, positive, sample)


def flatten_distributions(latent: LatentDistributionSet, labels: torch.Tensor,
                          keep: str = "both"):
    """Every (sample, modality, label) vector with its cluster id and positive flag.

    Returns (vectors [B*3*q, D], cluster [B*3*q], positive [B*3*q], sample [B*3*q]),
    ordered sample-major, then modality, then label.
    """
    b, q = labels.shape
    e = torch.stack([to_vector(latent.mu[m], latent.sigma[m], keep=keep)
                     for m in MODALITIES], dim=1)            # [B, 3, q, D]
    cluster = (torch.arange(3)[:, None] * q + torch.arange(q)[None, :]).expand(b, 3, q)
    positive = labels.bool()[:, None, :].expand(b, 3, q)
    sample = torch.arange(b)[:, None, None].expand(b, 3, q)
    return (e.reshape(b * 3 * q, -1), cluster.reshape(-1),
            positive.reshape(-1), sample.reshape(-1))


def supcon_loss(vectors: torch.Tensor, cluster: torch.Tensor, positive: torch.Tensor,
                queue_vectors: Optional[torch.Tensor] = None,
                queue_cluster: Optional[torch.Tensor] = None,
                queue_positive: Optional[torch.Tensor] = None,
                tau: float = 0.1, q: Optional[int] = None,
                cross_modal: bool = False, reduction: str = "sum") -> torch.Tensor:
    """Supervised contrastive loss summed over positive anchors.

    Anchors are the batch vectors with ``positive`` set. For an anchor, the
    candidate set is every other batch vector plus every queue entry; its
    positives are candidates that are themselves positive and share the
    anchor's cluster (or only its label when ``cross_modal``). Anchors
    without positives contribute nothing. ``reduction="mean"`` averages over
    the contributing anchors instead of summing.
    """
    if tau <= 0:
        raise ValueError("scl.tau must be positive")
    n = vectors.shape[0]
    if queue_vectors is not None and queue_vectors.shape[0]:
        cand = torch.cat([vectors, queue_vectors.detach().to(vectors.dtype)])
        cand_cluster = torch.cat([cluster, queue_cluster])
        cand_pos = torch.cat([positive, queue_positive])
    else:
        cand, cand_cluster, cand_pos = vectors, cluster, positive
    anchors = torch.nonzero(positive, as_tuple=True)[0]
    if anchors.numel() == 0:
        return vectors.sum() * 0.0
    anchor_vec = vectors[anchors]
    logits = anchor_vec @ cand.T / tau                          # [A, N + Q]
    not_self = torch.ones_like(logits, dtype=torch.bool)
    not_self[torch.arange(anchors.numel()), anchors] = False
    a_cluster, c_cluster = cluster[anchors][:, None], cand_cluster[None, :]
    if cross_modal:
        if q is None:
            raise ValueError("q is required for cross-modal positives")
        same = (a_cluster % q) == (c_cluster % q)
    else:
        same = a_cluster == c_cluster
    pos_mask = same & cand_pos[None, :] & not_self
    n_pos = pos_mask.sum(dim=1)
    log_prob = logits - torch.logsumexp(
        logits.masked_fill(~not_self, float("-inf")), dim=1, keepdim=True)
    per_anchor = -(log_prob * pos_mask).sum(dim=1) / n_pos.clamp(min=1)
    kept = per_anchor[n_pos > 0]
    if reduction == "mean":
        return kept.mean() if kept.numel() else kept.sum()
    return kept.sum()
