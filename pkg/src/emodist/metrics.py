"""Multi-label metrics and analysis reports."""
from __future__ import annotations

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import silhouette_score


def _safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def multilabel_metrics(y_true, y_pred) -> dict:
    """Jaccard accuracy plus micro precision/recall/F1 over binary matrices.

    Accuracy averages |pred & true| / |pred | true| over samples, counting a
    sample with both sets empty as 1. Undefined ratios are reported as 0.
    """
    y = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if y.shape != p.shape or y.ndim != 2:
        raise ValueError("y_true and y_pred must be equal-shape 2-d arrays")
    inter = (y & p).sum(axis=1)
    union = (y | p).sum(axis=1)
    jacc = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    tp = int((y & p).sum())
    fp = int((~y & p).sum())
    fn = int((y & ~p).sum())
    tn = int((~y & ~p).sum())
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * tp, 2 * tp + fp + fn)
    tp_l = (y & p).sum(axis=0)
    fp_l = (~y & p).sum(axis=0)
    fn_l = (y & ~p).sum(axis=0)
    return {
        "acc": float(jacc.mean()) if len(jacc) else 0.0,
        "precision": precision,
        "recall": recall,
        "micro_f1": f1,
        "per_label_precision": [_safe_div(a, a + b) for a, b in zip(tp_l, fp_l)],
        "per_label_recall": [_safe_div(a, a + b) for a, b in zip(tp_l, fn_l)],
        "confusion": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    }


def label_correlation(matrix) -> np.ndarray:
    """Pearson correlation between label columns; constant columns correlate 0."""
    x = np.asarray(matrix, dtype=np.float64)
    centred = x - x.mean(axis=0)
    norms = np.sqrt((centred ** 2).sum(axis=0))
    q = x.shape[1]
    out = np.zeros((q, q))
    live = norms > 0
    if live.any():
        c = centred[:, live] / norms[live]
        out[np.ix_(live, live)] = c.T @ c
    return out


def emotion_correlation_report(predictions, labels) -> dict:
    m_pred = label_correlation(predictions)
    m_true = label_correlation(labels)
    a, b = m_pred.ravel(), m_true.ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        cosine = 1.0 if np.array_equal(a, b) else 0.0
    else:
        cosine = float(a @ b / (na * nb))
    return {"pred": m_pred, "true": m_true, "cosine": cosine}


def cooccurrence(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    return y.T @ y


def cluster_silhouette(vectors, clusters, max_points: int = 4000, seed: int = 0) -> float:
    vectors = np.asarray(vectors)
    clusters = np.asarray(clusters)
    if len(np.unique(clusters)) < 2 or len(vectors) < 3:
        return float("nan")
    if len(vectors) > max_points:
        keep = np.random.default_rng(seed).choice(len(vectors), max_points, replace=False)
        vectors, clusters = vectors[keep], clusters[keep]
    return float(silhouette_score(vectors, clusters))


def spearman(a, b) -> float:
    rho = spearmanr(a, b).statistic
    return float(rho) if np.isfinite(rho) else 0.0
