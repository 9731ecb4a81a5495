"""Correctness tracking and the soft-ranking ordinality loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .distribution import LatentDistributionSet

KL_EPS = 1e-12


class CorrectnessTracker:
    """Running proportion of labels the info classifier gets right, per sample."""

    def __init__(self, n_samples: int, prior: float = 0.5):
        self.prior = prior
        self.count = np.zeros(n_samples, dtype=np.int64)
        self.correct = np.zeros(n_samples, dtype=np.float64)

    def __len__(self) -> int:
        return self.count.shape[0]

    def update(self, indices, probs, labels, threshold: float = 0.5) -> "CorrectnessTracker":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError("sample index outside tracker range")
        p = torch.as_tensor(probs).detach().cpu().numpy()
        y = torch.as_tensor(labels).detach().cpu().numpy()
        step = ((p >= threshold) == (y >= 0.5)).mean(axis=1)
        np.add.at(self.count, idx, 1)
        np.add.at(self.correct, idx, step)
        return self

    def proportions(self, indices=None) -> np.ndarray:
        count = self.count if indices is None else self.count[np.asarray(indices)]
        correct = self.correct if indices is None else self.correct[np.asarray(indices)]
        out = np.full(count.shape, self.prior, dtype=np.float64)
        seen = count > 0
        out[seen] = correct[seen] / count[seen]
        return out

    def state_dict(self) -> dict:
        return {"count": self.count.copy(), "correct": self.correct.copy(), "prior": self.prior}

    def load_state_dict(self, state) -> None:
        self.count = np.asarray(state["count"]).copy()
        self.correct = np.asarray(state["correct"]).copy()
        self.prior = float(state["prior"])


def tracker_update(tracker, indices, probs, labels, threshold=0.5):
    return tracker.update(indices, probs, labels, threshold)


@dataclass
class CalibBatch:
    S: torch.Tensor
    D: torch.Tensor
    R: torch.Tensor


def build_calib_batch(latent: LatentDistributionSet, d: torch.Tensor,
                      tracker: CorrectnessTracker, indices) -> CalibBatch:
    sigma = latent.concat_sigma()
    r = tracker.proportions(torch.as_tensor(indices).cpu().numpy())
    return CalibBatch(
        S=1.0 / sigma.norm(dim=1),
        D=1.0 - d,
        R=torch.as_tensor(r, dtype=sigma.dtype),
    )


def _kl(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    p = p.clamp_min(KL_EPS)
    q = q.clamp_min(KL_EPS)
    return (p * (p.log() - q.log())).sum()


def symmetric_kl(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    return _kl(p, q) + _kl(q, p)


def zscore(x: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    centred = x - x.mean()
    return centred / (centred.pow(2).mean().sqrt() + eps)


def loss_ocl(calib: CalibBatch, temperature: float = 1.0, use_sr: bool = True,
             use_dr: bool = True, use_ds: bool = False,
             normalize: str = "none") -> torch.Tensor:
    """Bidirectional KL between batch softmaxes of S, D and the constant R.

    ``normalize`` controls the scale each vector enters its softmax with:
    "none" uses raw values, "zscore" standardizes S, D and R over the batch,
    and "zscore_sr" standardizes only the S and R entering the S-R term.
    D and R already share the [0, 1] range while 1/||sigma|| has no fixed
    scale, so "zscore_sr" compares S by rank-like position only.
    """
    s, d = calib.S, calib.D
    if not (s.shape == d.shape == calib.R.shape) or s.ndim != 1:
        raise ValueError("S, D and R must be equal-length vectors")
    if s.shape[0] < 2:
        return (s.sum() + d.sum()) * 0.0
    r = calib.R.detach().to(s.dtype)
    r_s = r
    if normalize == "zscore":
        s, d, r = zscore(s), zscore(d), zscore(r)
        r_s = r
    elif normalize == "zscore_sr":
        s, r_s = zscore(s), zscore(r)
    elif normalize != "none":
        raise ValueError(f"unknown normalization {normalize!r}")
    p_s = torch.softmax(s / temperature, dim=0)
    p_d = torch.softmax(d / temperature, dim=0)
    p_r = torch.softmax(r / temperature, dim=0)
    total = s.new_zeros(())
    if use_dr:
        total = total + symmetric_kl(p_d, p_r)
    if use_sr:
        total = total + symmetric_kl(p_s, torch.softmax(r_s / temperature, dim=0))
    if use_ds:
        total = total + symmetric_kl(p_d, p_s)
    return total
