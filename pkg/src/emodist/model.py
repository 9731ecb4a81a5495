"""The full network: encoders, label pooling, info classifier, Gaussian heads, fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn

from .config import TrainConfig
from .distribution import Decoupler, LatentDistributionSet
from .emotion_space import EmotionSpace, InfoClassifier
from .encoders import UnimodalEncoders
from .fusion import FusionClassifiers, FusionPrediction, inference_uncertainty, uncertainty_score


@dataclass
class ModelOutput:
    encoded: Dict[str, torch.Tensor]
    features: Dict[str, torch.Tensor]
    attention: Dict[str, torch.Tensor]
    dir_logits: torch.Tensor
    y_dir: torch.Tensor
    latent: LatentDistributionSet
    d: torch.Tensor
    fusion: FusionPrediction

    @property
    def y_final(self) -> torch.Tensor:
        return self.fusion.y_final


class EmotionDistributionNet(nn.Module):
    def __init__(self, q: int, dims: Dict[str, int], config: TrainConfig):
        super().__init__()
        self.q = q
        self.dims = dict(dims)
        self.config = config
        d_h = config.emotion_space_d_h
        self.encoders = UnimodalEncoders(dims, config.encoder())
        self.emotion_space = EmotionSpace(
            q, config.encoder_width, d_h=d_h, proj_dim=config.emotion_space_proj_dim,
            use_label_queries=config.esm_enabled)
        self.info = InfoClassifier(q, d_h, hidden=config.info_hidden)
        self.decoupler = Decoupler(d_h)
        self.fusion = FusionClassifiers(q, d_h // 2, hidden=config.fusion_hidden)

    def forward(self, features, masks, labels: Optional[torch.Tensor] = None) -> ModelOutput:
        """Run every stage; ``labels`` selects the training-time uncertainty score.

        Without labels the gate uses the entropy of the info classifier instead.
        """
        cfg = self.config
        encoded = self.encoders(features, masks)
        feats, maps = self.emotion_space(encoded, masks)
        dir_logits = self.info(feats)
        y_dir = torch.sigmoid(dir_logits)
        latent = self.decoupler(feats)
        if labels is not None:
            d = uncertainty_score(y_dir, labels)
        else:
            d = inference_uncertainty(y_dir)
        gate = d.detach() if cfg.fusion_detach_gate else d
        fused = self.fusion(latent, gate, swap_gate=cfg.fusion_swap_gate,
                            drop_mu=cfg.cls_drop_mu, drop_sigma=cfg.cls_drop_sigma)
        return ModelOutput(encoded, feats, maps, dir_logits, y_dir, latent, d, fused)

    def parameter_groups(self) -> Dict[str, list]:
        """Named parameter groups, one per architectural component."""
        groups = {
            "encoder.visual": self.encoders.stacks["visual"],
            "encoder.audio": self.encoders.stacks["audio"],
            "encoder.text": self.encoders.stacks["text"],
            "emotion_space": self.emotion_space,
            "info_classifier": self.info,
            "decoupler.mu": None,
            "decoupler.sigma": None,
            "decoupler.encoder": None,
            "fusion.mu": self.fusion.mu,
            "fusion.sigma": self.fusion.sigma,
        }
        out = {}
        for name, module in groups.items():
            if module is not None:
                out[name] = list(module.named_parameters())
        heads = self.decoupler.heads
        for part in ("mu", "sigma", "encoder"):
            out[f"decoupler.{part}"] = [
                (f"{m}.{n}", p) for m in heads
                for n, p in getattr(heads[m], part).named_parameters()]
        return out
