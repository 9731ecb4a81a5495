"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

from typing import List, Sequence

import numpy as np
from sklearn.exceptions import NotFittedError

from .data import MODALITIES, MultimodalSample


def check_samples(X, y=None) -> List[MultimodalSample]:
    """Coerce ``X`` into a list of samples, attaching labels from ``y`` when given.

    ``X`` may hold :class:`MultimodalSample` objects or (visual, audio, text)
    triples of 2-d arrays.
    """
    if isinstance(X, MultimodalSample):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("X must contain at least one sample")
    labels = None if y is None else check_label_matrix(y, n_rows=len(X))
    out = []
    for i, item in enumerate(X):
        if isinstance(item, MultimodalSample):
            sample = item
            if labels is not None:
                sample = MultimodalSample(sample.id, sample.visual, sample.audio,
                                          sample.text, labels[i], sample.meta)
        else:
            try:
                v, a, t = item
            except (TypeError, ValueError) as exc:
                raise ValueError(
                    f"X[{i}] must be a MultimodalSample or a (visual, audio, text) triple"
                ) from exc
            lab = labels[i] if labels is not None else np.zeros(0, dtype=np.int64)
            sample = MultimodalSample(str(i), np.asarray(v, dtype=np.float64),
                                      np.asarray(a, dtype=np.float64),
                                      np.asarray(t, dtype=np.float64), lab)
        for m in MODALITIES:
            x = sample.features(m)
            if x.ndim != 2 or x.shape[0] < 1:
                raise ValueError(f"X[{i}].{m} must be a non-empty 2-d array")
            if not np.isfinite(x).all():
                raise ValueError(f"X[{i}].{m} contains non-finite values")
        out.append(sample)
    return out


def check_label_matrix(y, n_rows: int | None = None, q: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 2:
        raise ValueError("labels must be a 2-d [n_samples, n_labels] array")
    if n_rows is not None and y.shape[0] != n_rows:
        raise ValueError(f"got {y.shape[0]} label rows for {n_rows} samples")
    if q is not None and y.shape[1] != q:
        raise ValueError(f"expected {q} label columns, got {y.shape[1]}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary (0/1)")
    return y.astype(np.int64)


def check_consistent_dims(samples: Sequence[MultimodalSample], dims: dict | None = None) -> dict:
    ref = dims or {m[0]: samples[0].features(m).shape[1] for m in MODALITIES}
    for s in samples:
        for m in MODALITIES:
            if s.features(m).shape[1] != ref[m[0]]:
                raise ValueError(
                    f"sample {s.id}: {m} has {s.features(m).shape[1]} columns, expected {ref[m[0]]}")
    return ref


def check_is_fitted(estimator) -> None:
    if getattr(estimator, "model_", None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
