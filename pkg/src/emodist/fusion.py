"""Uncertainty-gated late fusion of the mean and scale branches."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .data import MODALITIES
from .distribution import LatentDistributionSet
from .emotion_space import PROB_EPS, bce, check_binary


@dataclass
class FusionPrediction:
    y_mu: torch.Tensor
    y_sigma: torch.Tensor
    d: torch.Tensor
    y_final: torch.Tensor


def uncertainty_score(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between info-classifier probabilities and labels, per sample."""
    if probs.shape != labels.shape:
        raise ValueError("probability and label shapes differ")
    check_binary(labels)
    return (probs - labels).abs().mean(dim=-1)


def inference_uncertainty(probs: torch.Tensor) -> torch.Tensor:
    """Label-free stand-in for the score: mean binary entropy in bits."""
    p = probs.clamp(PROB_EPS, 1 - PROB_EPS)
    h = -(p * torch.log(p) + (1 - p) * torch.log1p(-p))
    return (h / math.log(2)).mean(dim=-1).clamp(0.0, 1.0)


def gated_mix(y_mu: torch.Tensor, y_sigma: torch.Tensor, d: torch.Tensor,
              swap_gate: bool = False) -> torch.Tensor:
    w = (1 - d) if swap_gate else d
    w = w[..., None]
    return w * y_mu + (1 - w) * y_sigma


class FusionClassifiers(nn.Module):
    """Mean-branch and scale-branch classifiers over concatenated modalities."""

    def __init__(self, q: int, d_half: int, hidden: int = 256):
        super().__init__()
        in_dim = 3 * q * d_half
        self.mu = nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, q))
        self.sigma = nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, q))

    def forward(self, latent: LatentDistributionSet, d: torch.Tensor,
                swap_gate: bool = False, drop_mu: bool = False,
                drop_sigma: bool = False) -> FusionPrediction:
        if drop_mu and drop_sigma:
            raise ValueError("cannot drop both fusion branches")
        means = torch.cat([latent.mu[m].flatten(1) for m in MODALITIES], dim=1)
        scales = torch.cat([latent.sigma[m].flatten(1) for m in MODALITIES], dim=1)
        y_mu = torch.sigmoid(self.mu(means))
        y_sigma = torch.sigmoid(self.sigma(scales))
        if drop_mu:
            final = y_sigma
        elif drop_sigma:
            final = y_mu
        else:
            final = gated_mix(y_mu, y_sigma, d, swap_gate)
        return FusionPrediction(y_mu, y_sigma, d, final)


def fuse(latent, d, classifiers: FusionClassifiers, **switches) -> FusionPrediction:
    if d.min() < 0 or d.max() > 1:
        raise ValueError("uncertainty score must lie in [0, 1]")
    return classifiers(latent, d, **switches)


def loss_cls(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return bce(probs, labels)
