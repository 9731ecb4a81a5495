"""Central finite-difference gradient checking for parameter groups."""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Tuple

import torch


def group_relative_errors(loss_fn: Callable[[], torch.Tensor],
                          groups: Dict[str, List[Tuple[str, torch.nn.Parameter]]],
                          eps: float = 1e-6, max_coords: int | None = None,
                          seed: int = 0, floor: float = 1e-10) -> Dict[str, float]:
    """Compare autograd gradients of ``loss_fn`` against central differences.

    Returns, per group, ||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||, floor)
    over the checked coordinates. ``max_coords`` subsamples coordinates per group.
    Parameters must be float64 for meaningful tolerances.
    """
    params = [p for ps in groups.values() for _, p in ps]
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = {id(p): (g if g is not None else torch.zeros_like(p)) for p, g in zip(params, grads)}
    gen = torch.Generator().manual_seed(seed)
    errors = {}
    with torch.no_grad():
        for name, members in groups.items():
            a_parts, n_parts = [], []
            for _, p in members:
                flat = p.view(-1)
                coords: Iterable[int] = range(flat.numel())
                if max_coords is not None and flat.numel() > max_coords:
                    coords = torch.randperm(flat.numel(), generator=gen)[:max_coords].tolist()
                for i in coords:
                    orig = flat[i].item()
                    flat[i] = orig + eps
                    up = loss_fn().item()
                    flat[i] = orig - eps
                    down = loss_fn().item()
                    flat[i] = orig
                    n_parts.append((up - down) / (2 * eps))
                    a_parts.append(analytic[id(p)].view(-1)[i].item())
            a = torch.tensor(a_parts, dtype=torch.float64)
            n = torch.tensor(n_parts, dtype=torch.float64)
            denom = max(a.norm().item(), n.norm().item(), floor)
            errors[name] = (a - n).norm().item() / denom
    return errors
