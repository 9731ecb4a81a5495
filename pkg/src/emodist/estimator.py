"""scikit-learn style front end for the uncertainty-aware emotion classifier."""
from __future__ import annotations

import copy
import logging
import math
import time
from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin

from .calibration import CorrectnessTracker
from .config import TrainConfig
from .data import collate
from .distribution import ContrastQueue, to_vector
from .losses import compute_losses
from .metrics import multilabel_metrics
from .model import EmotionDistributionNet
from .validation import check_consistent_dims, check_is_fitted, check_label_matrix, check_samples

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NonFiniteLossError(FloatingPointError):
    pass


def warmup_cosine(total_steps: int, warmup: float):
    """Multiplier schedule: linear ramp over ``warmup`` of the steps, then cosine to 0."""
    warm = int(math.floor(warmup * total_steps))

    def factor(step: int) -> float:
        if step < warm:
            return (step + 1) / warm
        progress = (step - warm) / max(1, total_steps - warm)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))

    return factor


def _sample_batches(samples, batch_size, seed=0, shuffle=False, max_len=None,
                    dtype=torch.float32):
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield collate([samples[i] for i in idx], idx.tolist(), max_len, dtype)


class EmotionDistributionClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label multimodal classifier with Gaussian label embeddings.

    Parameters mirror the most-tuned entries of :class:`TrainConfig`; any
    other key can be passed through ``config`` as a flat dotted mapping
    (e.g. ``{"scl.tau": 0.2, "encoder.width": 64}``).

    ``X`` is a sequence of :class:`~emodist.data.MultimodalSample` or of
    (visual, audio, text) triples; ``y`` is a binary [n_samples, n_labels]
    matrix and may be omitted when the samples carry labels.
    """

    def __init__(self, lambda_ocl=0.1, beta_scl=0.8, gamma_dir=0.1, learning_rate=2e-5,
                 epochs=30, batch_size=128, seed=0, threshold=0.5, config=None,
                 verbose=False):
        self.lambda_ocl = lambda_ocl
        self.beta_scl = beta_scl
        self.gamma_dir = gamma_dir
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.threshold = threshold
        self.config = config
        self.verbose = verbose

    def build_config(self) -> TrainConfig:
        flat = dict(self.config or {})
        flat.update({
            "loss.lambda": self.lambda_ocl, "loss.beta": self.beta_scl,
            "loss.gamma": self.gamma_dir, "optim.lr": self.learning_rate,
            "train.epochs": self.epochs, "train.batch_size": self.batch_size,
            "train.seed": self.seed, "eval.threshold": self.threshold,
        })
        return TrainConfig.from_flat(flat)

    # ------------------------------------------------------------------ fitting

    def _init_state(self, q: int, dims: dict, n_samples: int) -> None:
        cfg = self.config_
        torch.manual_seed(cfg.train_seed)
        self.model_ = EmotionDistributionNet(q, dims, cfg).to(self.dtype_)
        d_vec = cfg.emotion_space_d_h if cfg.scl_keep == "both" else cfg.emotion_space_d_h // 2
        self.queue_ = ContrastQueue(cfg.scl_queue_size, d_vec, dtype=self.dtype_)
        self.tracker_ = CorrectnessTracker(n_samples)
        self.n_labels_ = q
        self.dims_ = dict(dims)

    def fit(self, X, y=None, eval_set=None, callback=None):
        """Train from scratch.

        ``eval_set=(X_val, y_val)`` enables per-epoch validation; the weights
        with the best validation micro-F1 are restored at the end.
        """
        self.config_ = cfg = self.build_config()
        self.dtype_ = DTYPES[cfg.train_dtype]
        samples = check_samples(X, y)
        labels = check_label_matrix(np.stack([s.labels for s in samples]))
        dims = check_consistent_dims(samples)
        self._init_state(labels.shape[1], dims, len(samples))
        val = None
        if eval_set is not None:
            val = check_samples(*eval_set) if isinstance(eval_set, tuple) else check_samples(eval_set)
            check_consistent_dims(val, dims)

        model = self.model_
        steps_per_epoch = math.ceil(len(samples) / cfg.train_batch_size)
        total_steps = steps_per_epoch * cfg.train_epochs
        self.optimizer_ = torch.optim.Adam(model.parameters(), lr=cfg.optim_lr)
        self.scheduler_ = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer_, warmup_cosine(total_steps, cfg.optim_warmup))
        self.history_ = []
        self.step_ = 0
        best_f1, best_state = -1.0, None
        for epoch in range(cfg.train_epochs):
            t0 = time.perf_counter()
            model.train()
            sums = {}
            n_batches = 0
            for batch in _sample_batches(samples, cfg.train_batch_size,
                                         seed=cfg.train_seed * 100003 + epoch, shuffle=True,
                                         max_len=cfg.data_max_len, dtype=self.dtype_):
                losses = self.train_step(batch)
                for k, v in losses.items():
                    sums[k] = sums.get(k, 0.0) + v
                n_batches += 1
            record = {"epoch": epoch + 1,
                      "loss": {k: v / n_batches for k, v in sums.items()},
                      "seconds": time.perf_counter() - t0}
            if val is not None:
                metrics = self._score_samples(val)
                record["val"] = metrics
                if metrics["micro_f1"] > best_f1:
                    best_f1 = metrics["micro_f1"]
                    best_state = copy.deepcopy(model.state_dict())
                    record["best"] = True
            self.history_.append(record)
            if self.verbose:
                log.info("epoch %d %s", epoch + 1, record["loss"])
            if callback is not None:
                callback(self, record)
        if best_state is not None:
            model.load_state_dict(best_state)
            self.best_val_micro_f1_ = best_f1
        model.eval()
        return self

    def train_step(self, batch) -> dict:
        cfg = self.config_
        model = self.model_
        out = model(batch.features, batch.masks, labels=batch.labels)
        losses = compute_losses(out, batch.labels, batch.indices, cfg, self.queue_, self.tracker_)
        if not torch.isfinite(losses.total):
            raise NonFiniteLossError(
                f"non-finite loss at step {self.step_}: {losses.as_floats()}")
        self.optimizer_.zero_grad(set_to_none=True)
        losses.total.backward()
        if cfg.optim_grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optim_grad_clip)
        self.optimizer_.step()
        self.scheduler_.step()
        self.tracker_.update(batch.indices, out.y_dir, batch.labels, cfg.eval_threshold)
        if losses.pending is not None:
            self.queue_.push(*losses.pending)
        self.step_ += 1
        return losses.as_floats()

    # --------------------------------------------------------------- inference

    def _forward_all(self, samples, with_labels=False):
        check_is_fitted(self)
        check_consistent_dims(samples, self.dims_)
        model = self.model_
        model.eval()
        cfg = self.config_
        chunks = []
        with torch.no_grad():
            for batch in _sample_batches(samples, max(cfg.train_batch_size, 256),
                                         max_len=cfg.data_max_len, dtype=self.dtype_):
                labels = batch.labels if with_labels else None
                chunks.append(model(batch.features, batch.masks, labels=labels))
        return chunks

    def inference_outputs(self, X, y=None) -> dict:
        """Numpy arrays of every per-sample quantity the analysis tools use."""
        samples = check_samples(X, y)
        chunks = self._forward_all(samples)
        keep = self.config_.scl_keep
        cat = lambda f: torch.cat([f(o) for o in chunks]).cpu().numpy()  # noqa: E731
        mods = ("visual", "audio", "text")
        return {
            "y_final": cat(lambda o: o.y_final),
            "y_dir": cat(lambda o: o.y_dir),
            "y_mu": cat(lambda o: o.fusion.y_mu),
            "y_sigma": cat(lambda o: o.fusion.y_sigma),
            "d_hat": cat(lambda o: o.d),
            "sigma_norm": cat(lambda o: o.latent.concat_sigma().norm(dim=1)),
            # mean L2 norm of the 3q per-(modality, label) scale vectors
            "sigma_mean_norm": cat(lambda o: torch.stack(
                [o.latent.sigma[m].norm(dim=-1) for m in mods], 1).mean(dim=(1, 2))),
            "mu": cat(lambda o: torch.cat([o.latent.mu[m].flatten(1) for m in mods], 1)),
            "sigma": cat(lambda o: o.latent.concat_sigma()),
            "vectors": cat(lambda o: torch.stack(
                [to_vector(o.latent.mu[m], o.latent.sigma[m], keep=keep) for m in mods], 1)),
        }

    def predict_proba(self, X) -> np.ndarray:
        samples = check_samples(X)
        return torch.cat([o.y_final for o in self._forward_all(samples)]).cpu().numpy()

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(np.int64)

    def transform(self, X) -> np.ndarray:
        """Concatenated latent means and scales, one row per sample."""
        out = self.inference_outputs(X)
        return np.concatenate([out["mu"], out["sigma"]], axis=1)

    def _score_samples(self, samples) -> dict:
        labels = np.stack([s.labels for s in samples])
        pred = self.predict(samples)
        self.model_.train()
        return multilabel_metrics(labels, pred)

    def score(self, X, y=None) -> float:
        samples = check_samples(X, y)
        labels = np.stack([s.labels for s in samples])
        return multilabel_metrics(labels, self.predict(samples))["micro_f1"]

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.multi_output = True
        tags.target_tags.single_output = False
        return tags
