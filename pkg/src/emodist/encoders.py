"""Per-modality transformer stacks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import torch
import torch.nn as nn

from .data import MODALITIES, SHORT


@dataclass
class EncoderConfig:
    layers_v: int = 3
    layers_a: int = 3
    layers_t: int = 3
    width: int = 256
    heads: int = 4
    ff_width: int = 512
    dropout: float = 0.1
    max_len: int = 512

    def validate(self) -> None:
        for m in "vat":
            if getattr(self, f"layers_{m}") < 1:
                raise ValueError(f"encoder.layers.{m} must be >= 1")
        if self.width % self.heads:
            raise ValueError("encoder.width must be divisible by encoder.heads")

    def layers(self, modality: str) -> int:
        return getattr(self, f"layers_{SHORT[modality]}")


class MaskedSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, s, w = x.shape
        h = self.heads
        q, k, v = self.qkv(x).view(b, s, 3, h, w // h).permute(2, 0, 3, 1, 4)
        logits = q @ k.transpose(-1, -2) / math.sqrt(w // h)
        logits = logits.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(logits, dim=-1))
        y = (attn @ v).transpose(1, 2).reshape(b, s, w)
        return self.out(y)


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, width: int, heads: int, ff_width: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = MaskedSelfAttention(width, heads, dropout)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(
            nn.Linear(width, ff_width), nn.GELU(), nn.Dropout(dropout),
            nn.Linear(ff_width, width))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = x + self.drop(self.attn(self.norm1(x), mask))
        return x + self.drop(self.ff(self.norm2(x)))


class ModalityEncoder(nn.Module):
    def __init__(self, in_dim: int, n_layers: int, config: EncoderConfig):
        super().__init__()
        self.in_dim = in_dim
        self.input = nn.Linear(in_dim, config.width)
        self.position = nn.Parameter(torch.randn(config.max_len, config.width) * 0.02)
        self.blocks = nn.ModuleList(
            Block(config.width, config.heads, config.ff_width, config.dropout)
            for _ in range(n_layers))
        self.norm = nn.LayerNorm(config.width)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected feature dim {self.in_dim}, got {x.shape[-1]}")
        if x.shape[1] > self.position.shape[0]:
            raise ValueError("sequence longer than encoder.max_len; truncate first")
        keep = mask[..., None].to(x.dtype)
        # zeroing padded frames makes their content unobservable downstream
        h = self.input(torch.where(mask[..., None], x, 0.0)) + self.position[: x.shape[1]]
        for block in self.blocks:
            h = block(h, mask)
        return self.norm(h) * keep


class UnimodalEncoders(nn.Module):
    """Independent encoder stack per modality; no weight sharing."""

    def __init__(self, dims: Dict[str, int], config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.stacks = nn.ModuleDict({
            m: ModalityEncoder(dims[SHORT[m]], config.layers(m), config)
            for m in MODALITIES})

    def forward(self, features: Dict[str, torch.Tensor],
                masks: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
        return {m: self.stacks[m](features[m], masks[m]) for m in MODALITIES}


def encode(batch, encoders: UnimodalEncoders) -> Dict[str, torch.Tensor]:
    return encoders(batch.features, batch.masks)

