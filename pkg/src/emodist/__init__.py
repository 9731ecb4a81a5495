"""Uncertainty-aware multimodal multi-label emotion recognition with Gaussian label embeddings."""
from .config import ConfigError, TrainConfig, load_config
from .data import (Batch, DatasetManifest, MultimodalSample, SampleStore, SynthConfig,
                   generate_synthetic, load_dataset, make_batches)
from .estimator import EmotionDistributionClassifier

__all__ = [
    "Batch", "ConfigError", "DatasetManifest", "EmotionDistributionClassifier",
    "MultimodalSample", "SampleStore", "SynthConfig", "TrainConfig",
    "generate_synthetic", "load_config", "load_dataset", "make_batches",
]
__version__ = "0.1.0"
