"""Assembly of the four training objectives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from .calibration import CorrectnessTracker, build_calib_batch, loss_ocl
from .config import ConfigError, TrainConfig
from .distribution import ContrastQueue, flatten_distributions, supcon_loss
from .emotion_space import bce_with_logits
from .fusion import loss_cls
from .model import ModelOutput


def total_loss(l_cls, l_ocl, l_scl, l_dir, lam: float, beta: float, gamma: float):
    if min(lam, beta, gamma) < 0:
        raise ConfigError("loss weights must be non-negative")
    return l_cls + lam * l_ocl + beta * l_scl + gamma * l_dir


@dataclass
class LossBreakdown:
    total: torch.Tensor
    cls: torch.Tensor
    ocl: torch.Tensor
    scl: torch.Tensor
    dir: torch.Tensor
    # vectors to enqueue after the step: (vectors, cluster, positive, sample)
    pending: Optional[tuple] = None

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("total", "cls", "ocl", "scl", "dir")}


def compute_losses(out: ModelOutput, labels: torch.Tensor, indices: torch.Tensor,
                   config: TrainConfig, queue: Optional[ContrastQueue],
                   tracker: Optional[CorrectnessTracker]) -> LossBreakdown:
    """Evaluate every objective for one batch; reads queue and tracker, never writes them."""
    zero = out.y_final.new_zeros(())
    l_cls = loss_cls(out.y_final, labels)
    l_dir = bce_with_logits(out.dir_logits, labels)

    l_scl, pending = zero, None
    if config.scl_active:
        vec, cluster, positive, local = flatten_distributions(
            out.latent, labels, keep=config.scl_keep)
        qv = qc = qp = None
        if queue is not None and len(queue):
            qv, qc, qp = queue.snapshot()
        l_scl = supcon_loss(vec, cluster, positive, qv, qc, qp, tau=config.scl_tau,
                            q=labels.shape[1], cross_modal=config.scl_cross_modal,
                            reduction=config.scl_reduction)
        pending = (vec.detach(), cluster, positive, indices[local])

    l_ocl = zero
    if config.ocl_active and tracker is not None:
        calib = build_calib_batch(out.latent, out.d, tracker, indices)
        l_ocl = loss_ocl(calib, temperature=config.ocl_temperature,
                         use_sr=not config.ocl_only_dr, use_dr=not config.ocl_only_sr,
                         use_ds=config.ocl_use_ds, normalize=config.ocl_normalize)

    total = total_loss(l_cls, l_ocl, l_scl, l_dir,
                       config.loss_lambda, config.loss_beta, config.loss_gamma)
    return LossBreakdown(total, l_cls, l_ocl, l_scl, l_dir, pending)
