"""Run-level harness: training with checkpoints, evaluation, exports and reports."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .config import TrainConfig
from .data import MODALITIES, SampleStore, load_dataset
from .estimator import EmotionDistributionClassifier
from .losses import total_loss  # noqa: F401  (re-exported for callers of the harness)
from .metrics import (cluster_silhouette, cooccurrence, emotion_correlation_report,
                      multilabel_metrics, spearman)

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.npz"


@dataclass
class MetricsReport:
    split: str
    n_samples: int
    acc: float
    precision: float
    recall: float
    micro_f1: float
    per_label_precision: List[float]
    per_label_recall: List[float]
    confusion: dict
    silhouette: Optional[float] = None
    sigma_noise_spearman: Optional[float] = None
    correlation_cosine: Optional[float] = None
    cooccurrence: Optional[list] = None
    epoch: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [("split", self.split), ("samples", self.n_samples), ("Acc", self.acc),
                ("P", self.precision), ("R", self.recall), ("miF1", self.micro_f1)]
        if self.silhouette is not None:
            rows.append(("silhouette", self.silhouette))
        if self.sigma_noise_spearman is not None:
            rows.append(("spearman(|sigma|, noise)", self.sigma_noise_spearman))
        if self.correlation_cosine is not None:
            rows.append(("label-correlation cosine", self.correlation_cosine))
        width = max(len(k) for k, _ in rows)
        lines = []
        for k, v in rows:
            v = f"{v:.4f}" if isinstance(v, float) else str(v)
            lines.append(f"{k:<{width}}  {v}")
        return "\n".join(lines)


# ------------------------------------------------------------------ checkpoints

def estimator_from_config(config: TrainConfig, verbose: bool = False) -> EmotionDistributionClassifier:
    flat = config.to_flat()
    direct = {"loss.lambda": "lambda_ocl", "loss.beta": "beta_scl", "loss.gamma": "gamma_dir",
              "optim.lr": "learning_rate", "train.epochs": "epochs",
              "train.batch_size": "batch_size", "train.seed": "seed",
              "eval.threshold": "threshold"}
    kwargs = {arg: flat.pop(key) for key, arg in direct.items()}
    return EmotionDistributionClassifier(config=flat, verbose=verbose, **kwargs)


def save_checkpoint(est: EmotionDistributionClassifier, path, meta: Optional[dict] = None) -> Path:
    """Write flat named parameter arrays plus config and metadata to one ``.npz``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy()
              for k, v in est.model_.state_dict().items()}
    arrays["tracker/count"] = est.tracker_.count
    arrays["tracker/correct"] = est.tracker_.correct
    info = {"config": est.config_.to_flat(), "q": est.n_labels_, "dims": est.dims_,
            "tracker_prior": est.tracker_.prior}
    info.update(meta or {})
    arrays["meta"] = np.array(json.dumps(info))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Rebuild a fitted estimator; returns (estimator, metadata)."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        config = TrainConfig.from_flat(meta["config"])
        est = estimator_from_config(config)
        est.config_ = config
        est.dtype_ = torch.float64 if config.train_dtype == "float64" else torch.float32
        est._init_state(meta["q"], meta["dims"], len(archive["tracker/count"]))
        state = {k[len("param/"):]: torch.as_tensor(archive[k])
                 for k in archive.files if k.startswith("param/")}
        est.model_.load_state_dict(state)
        est.tracker_.load_state_dict({"count": archive["tracker/count"],
                                      "correct": archive["tracker/correct"],
                                      "prior": meta.get("tracker_prior", 0.5)})
    est.model_.eval()
    return est, meta


# -------------------------------------------------------------------- training

def train(config: TrainConfig, data, out_dir, verbose: bool = False):
    """Fit on the train split, keep the best-val-miF1 weights, write checkpoint and reports.

    Returns (checkpoint path, list of per-epoch validation reports).
    """
    store = data if isinstance(data, SampleStore) else load_dataset(data)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ids = store.split("train")
    val_ids = store.split("val") if "val" in store.manifest.splits else []
    train_samples = [store[s] for s in train_ids]
    val_samples = [store[s] for s in val_ids]
    reports: List[dict] = []

    def on_epoch(est, record):
        if "val" in record:
            rep = _report_from_metrics("val", len(val_samples), record["val"])
            rep.epoch = record["epoch"]
            rep.extra = {"loss": record["loss"]}
            reports.append(rep.to_dict())
        else:
            reports.append({"epoch": record["epoch"], "loss": record["loss"]})

    est = estimator_from_config(config, verbose=verbose)
    est.fit(train_samples, eval_set=val_samples or None, callback=on_epoch)
    ckpt = save_checkpoint(est, out_dir / CHECKPOINT_NAME, {
        "data_root": str(Path(store.root).resolve()),
        "train_ids": train_ids,
        "label_names": store.manifest.label_names,
        "queue_pushes": est.queue_.pushes,
    })
    (out_dir / "history.json").write_text(json.dumps(reports, indent=2), encoding="utf-8")
    if reports and "micro_f1" in reports[-1]:
        lines = [f"{'epoch':>5}  {'loss':>9}  {'Acc':>6}  {'P':>6}  {'R':>6}  {'miF1':>6}"]
        for r in reports:
            lines.append(f"{r['epoch']:>5}  {r['extra']['loss']['total']:>9.4f}  {r['acc']:.4f}"
                         f"  {r['precision']:.4f}  {r['recall']:.4f}  {r['micro_f1']:.4f}")
        (out_dir / "history.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ckpt, reports


def _report_from_metrics(split, n, m) -> MetricsReport:
    return MetricsReport(split=split, n_samples=n, acc=m["acc"], precision=m["precision"],
                         recall=m["recall"], micro_f1=m["micro_f1"],
                         per_label_precision=m["per_label_precision"],
                         per_label_recall=m["per_label_recall"], confusion=m["confusion"])


def _resolve(ckpt, data=None):
    est, meta = load_checkpoint(ckpt)
    root = data or meta.get("data_root")
    if root is None:
        raise ValueError("checkpoint does not record a dataset; pass data explicitly")
    store = data if isinstance(data, SampleStore) else load_dataset(root)
    return est, meta, store


def positive_vectors(vectors: np.ndarray, labels: np.ndarray):
    """Keep (sample, modality, label) vectors whose sample carries the label."""
    n, n_mod, q, _ = vectors.shape
    keep = np.broadcast_to(labels.astype(bool)[:, None, :], (n, n_mod, q))
    idx = np.nonzero(keep)
    return vectors[idx], idx[1] * q + idx[2], idx


def evaluate(ckpt, split: str, data=None, threshold: Optional[float] = None) -> MetricsReport:
    est, meta, store = _resolve(ckpt, data)
    samples = [store[s] for s in store.split(split)]
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    labels = np.stack([s.labels for s in samples])
    out = est.inference_outputs(samples)
    thr = est.threshold if threshold is None else threshold
    pred = (out["y_final"] >= thr).astype(np.int64)
    rep = _report_from_metrics(split, len(samples), multilabel_metrics(labels, pred))
    vecs, clusters, _ = positive_vectors(out["vectors"], labels)
    rep.silhouette = cluster_silhouette(vecs, clusters) if len(vecs) else None
    if all("noise" in s.meta for s in samples):
        rep.sigma_noise_spearman = spearman([s.meta["noise"] for s in samples],
                                            out["sigma_mean_norm"])
    rep.correlation_cosine = emotion_correlation_report(pred, labels)["cosine"]
    rep.cooccurrence = cooccurrence(pred).tolist()
    return rep


def export_embeddings(ckpt, split: str, out_path, data=None) -> int:
    """Write one JSON line per positive (sample, modality, label) distribution vector."""
    est, meta, store = _resolve(ckpt, data)
    samples = [store[s] for s in store.split(split)]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if not samples:
        out_path.write_text("", encoding="utf-8")
        return 0
    labels = np.stack([s.labels for s in samples])
    vectors = est.inference_outputs(samples)["vectors"]
    names = meta.get("label_names") or [str(j) for j in range(labels.shape[1])]
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            for mi, m in enumerate(MODALITIES):
                for j in np.nonzero(labels[i])[0]:
                    fh.write(json.dumps({"sample_id": s.id, "modality": m,
                                         "label": names[j], "label_index": int(j),
                                         "vector": vectors[i, mi, j].tolist()}) + "\n")
                    count += 1
    return count


def calib_report(ckpt, split: str, data=None) -> dict:
    """Per-sample (||sigma||, d, r) table with rank correlations among them."""
    est, meta, store = _resolve(ckpt, data)
    samples = [store[s] for s in store.split(split)]
    labels = np.stack([s.labels for s in samples])
    out = est.inference_outputs(samples)
    d = np.abs(out["y_dir"] - labels).mean(axis=1)
    train_index = {sid: i for i, sid in enumerate(meta.get("train_ids", []))}
    r = np.array([est.tracker_.proportions([train_index[s.id]])[0]
                  if s.id in train_index else np.nan for s in samples])
    rows = []
    for i, s in enumerate(samples):
        row = {"id": s.id, "sigma_norm": float(out["sigma_norm"][i]),
               "sigma_mean_norm": float(out["sigma_mean_norm"][i]), "d": float(d[i]),
               "d_hat": float(out["d_hat"][i]), "r": None if np.isnan(r[i]) else float(r[i])}
        if "noise" in s.meta:
            row["noise"] = float(s.meta["noise"])
        rows.append(row)
    corr = {"spearman(1/|sigma|, 1-d)": spearman(1 / out["sigma_norm"], 1 - d),
            "spearman(d, d_hat)": spearman(d, out["d_hat"])}
    seen = ~np.isnan(r)
    if seen.sum() > 2:
        corr["spearman(1/|sigma|, r)"] = spearman(1 / out["sigma_norm"][seen], r[seen])
        corr["spearman(1-d, r)"] = spearman(1 - d[seen], r[seen])
    if all("noise" in s.meta for s in samples):
        noise = [s.meta["noise"] for s in samples]
        corr["spearman(|sigma|, noise)"] = spearman(out["sigma_mean_norm"], noise)
        corr["spearman(d, noise)"] = spearman(d, noise)
    return {"split": split, "rows": rows, "correlations": corr}
