"""Dataset format, loading, batching and the synthetic generator.

On disk a dataset is a directory holding ``manifest.json`` plus one
``<split>.jsonl`` file per split. Each record line is a JSON object::

    {"id": "s00001", "labels": [0, 1, 0, 1],
     "visual": [[...], ...], "audio": [[...], ...], "text": [[...], ...],
     "meta": {"noise": 0.41, "intensity": [0.0, 0.8, 0.0, 1.2]}}

Floats are written with Python's shortest round-trip repr, so a
write/load cycle reproduces the generated arrays bit for bit.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import torch

MODALITIES = ("visual", "audio", "text")
SHORT = {"visual": "v", "audio": "a", "text": "t"}

MANIFEST_NAME = "manifest.json"


class DatasetFormatError(ValueError):
    """Manifest or record file cannot be parsed."""


class SampleValidationError(ValueError):
    """A stored sample violates the manifest or sample invariants."""


@dataclass
class MultimodalSample:
    id: str
    visual: np.ndarray
    audio: np.ndarray
    text: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def features(self, modality: str) -> np.ndarray:
        return getattr(self, modality)

    def to_record(self) -> dict:
        rec = {"id": self.id, "labels": [int(v) for v in self.labels]}
        for m in MODALITIES:
            rec[m] = self.features(m).tolist()
        if self.meta:
            rec["meta"] = self.meta
        return rec


@dataclass
class DatasetManifest:
    name: str
    q: int
    label_names: List[str]
    dims: Dict[str, int]
    splits: Dict[str, List[str]]
    aligned: bool = False

    def validate(self) -> None:
        if self.q <= 0:
            raise DatasetFormatError("q must be positive")
        if len(self.label_names) != self.q:
            raise DatasetFormatError(
                f"label_names has {len(self.label_names)} entries, expected q={self.q}")
        for m in MODALITIES:
            if int(self.dims.get(SHORT[m], 0)) <= 0:
                raise DatasetFormatError(f"missing or invalid dimension for {m}")
        seen: Dict[str, str] = {}
        for split, ids in self.splits.items():
            for sid in ids:
                if sid in seen:
                    raise DatasetFormatError(
                        f"id {sid!r} appears in splits {seen[sid]!r} and {split!r}")
                seen[sid] = split

    def dim(self, modality: str) -> int:
        return int(self.dims[SHORT[modality]])

    def all_ids(self) -> List[str]:
        return [sid for ids in self.splits.values() for sid in ids]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "q": self.q,
            "label_names": list(self.label_names),
            "dims": dict(self.dims),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "aligned": self.aligned,
        }


def validate_sample(sample: MultimodalSample, manifest: DatasetManifest) -> None:
    sid = sample.id
    labels = np.asarray(sample.labels)
    if labels.shape != (manifest.q,):
        raise SampleValidationError(
            f"sample {sid}: label vector has shape {labels.shape}, expected ({manifest.q},)")
    if not np.isin(labels, (0, 1)).all():
        raise SampleValidationError(f"sample {sid}: labels must be binary")
    for m in MODALITIES:
        x = sample.features(m)
        if x.ndim != 2 or x.shape[0] < 1:
            raise SampleValidationError(f"sample {sid}: {m} must be a non-empty 2-d matrix")
        if x.shape[1] != manifest.dim(m):
            raise SampleValidationError(
                f"sample {sid}: {m} has {x.shape[1]} columns, manifest declares {manifest.dim(m)}")
        if not np.isfinite(x).all():
            raise SampleValidationError(f"sample {sid}: {m} contains non-finite values")


def _sample_from_record(rec: dict) -> MultimodalSample:
    try:
        return MultimodalSample(
            id=str(rec["id"]),
            visual=np.asarray(rec["visual"], dtype=np.float64),
            audio=np.asarray(rec["audio"], dtype=np.float64),
            text=np.asarray(rec["text"], dtype=np.float64),
            labels=np.asarray(rec["labels"]),
            meta=rec.get("meta") or {},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed record: {exc}") from exc


_ID_RE = re.compile(r'^\{"id": "((?:[^"\\]|\\.)*)"')


class SampleStore:
    """Lazy id -> sample accessor over the record files of one dataset.

    Raw lines are indexed at load time; a record is decoded and checked
    against the manifest the first time it is requested.
    """

    def __init__(self, root: Path, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest
        self._raw: Dict[str, str] = {}
        self._cache: Dict[str, MultimodalSample] = {}
        for split in manifest.splits:
            path = self.root / f"{split}.jsonl"
            if not path.exists():
                if manifest.splits[split]:
                    raise DatasetFormatError(f"missing record file {path.name}")
                continue
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    match = _ID_RE.match(line)
                    sid = json.loads(f'"{match.group(1)}"') if match else None
                    if sid is None:
                        try:
                            sid = str(json.loads(line)["id"])
                        except (ValueError, KeyError, TypeError) as exc:
                            raise DatasetFormatError(
                                f"{path.name}:{lineno}: cannot read record id") from exc
                    self._raw[sid] = line
        self.ids = manifest.all_ids()
        missing = [sid for sid in self.ids if sid not in self._raw]
        if missing:
            raise DatasetFormatError(f"manifest references unknown ids: {missing[:5]}")
        self.index = {sid: i for i, sid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, sid: str) -> bool:
        return sid in self.index

    def __getitem__(self, sid: str) -> MultimodalSample:
        if sid in self._cache:
            return self._cache[sid]
        if sid not in self._raw:
            raise KeyError(f"unknown sample id {sid!r}")
        try:
            rec = json.loads(self._raw[sid])
        except ValueError as exc:
            raise DatasetFormatError(f"sample {sid}: corrupt record") from exc
        sample = _sample_from_record(rec)
        validate_sample(sample, self.manifest)
        self._cache[sid] = sample
        return sample

    def split(self, name: str) -> List[str]:
        if name not in self.manifest.splits:
            raise KeyError(f"unknown split {name!r}")
        return list(self.manifest.splits[name])

    def iter_split(self, name: str) -> Iterator[MultimodalSample]:
        for sid in self.split(name):
            yield self[sid]


def load_dataset(root) -> SampleStore:
    """Read ``manifest.json`` under ``root`` and index its record files."""
    root = Path(root)
    path = root / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        manifest = DatasetManifest(
            name=raw["name"],
            q=int(raw["q"]),
            label_names=list(raw["label_names"]),
            dims={k: int(v) for k, v in raw["dims"].items()},
            splits={k: [str(s) for s in v] for k, v in raw["splits"].items()},
            aligned=bool(raw.get("aligned", False)),
        )
    except FileNotFoundError as exc:
        raise DatasetFormatError(f"no manifest at {path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"corrupt manifest {path}: {exc}") from exc
    manifest.validate()
    return SampleStore(root, manifest)


def write_dataset(root, manifest: DatasetManifest,
                  samples: Sequence[MultimodalSample]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest.validate()
    by_id = {s.id: s for s in samples}
    for s in samples:
        validate_sample(s, manifest)
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    for split, ids in manifest.splits.items():
        with open(root / f"{split}.jsonl", "w", encoding="utf-8") as fh:
            for sid in ids:
                fh.write(json.dumps(by_id[sid].to_record()) + "\n")
    return root


@dataclass
class Batch:
    """Padded block of samples; masks are True at valid frames."""

    ids: List[str]
    indices: torch.Tensor
    features: Dict[str, torch.Tensor]
    masks: Dict[str, torch.Tensor]
    labels: torch.Tensor
    samples: List[MultimodalSample] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(self.ids, self.indices,
                     {m: x.to(dtype) for m, x in self.features.items()},
                     self.masks, self.labels.to(dtype), self.samples)


def collate(samples: Sequence[MultimodalSample], indices: Sequence[int],
            max_len: Optional[int] = None,
            dtype: torch.dtype = torch.float32) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    feats, masks = {}, {}
    for m in MODALITIES:
        seqs = [s.features(m) for s in samples]
        if max_len is not None:
            seqs = [x[:max_len] for x in seqs]
        longest = max(x.shape[0] for x in seqs)
        dim = seqs[0].shape[1]
        block = np.zeros((len(seqs), longest, dim))
        mask = np.zeros((len(seqs), longest), dtype=bool)
        for i, x in enumerate(seqs):
            block[i, : x.shape[0]] = x
            mask[i, : x.shape[0]] = True
        feats[m] = torch.as_tensor(block, dtype=dtype)
        masks[m] = torch.as_tensor(mask)
    labels = torch.as_tensor(np.stack([s.labels for s in samples]), dtype=dtype)
    return Batch(
        ids=[s.id for s in samples],
        indices=torch.as_tensor(list(indices), dtype=torch.long),
        features=feats,
        masks=masks,
        labels=labels,
        samples=list(samples),
    )


def make_batches(store: SampleStore, split: Sequence[str], batch_size: int,
                 seed: int = 0, shuffle: bool = True,
                 max_len: Optional[int] = None,
                 dtype: torch.dtype = torch.float32) -> List[Batch]:
    """Cut ``split`` into padded batches; order is a pure function of ``seed``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    ids = list(split)
    for sid in ids:
        if sid not in store:
            raise KeyError(f"unknown sample id {sid!r}")
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(ids))
        ids = [ids[i] for i in order]
    batches = []
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        batches.append(collate([store[s] for s in chunk],
                               [store.index[s] for s in chunk], max_len, dtype))
    return batches


@dataclass
class SynthConfig:
    n: int = 2000
    q: int = 4
    dims: Dict[str, int] = field(default_factory=lambda: {"v": 8, "a": 8, "t": 8})
    seq_lens: Dict[str, tuple] = field(
        default_factory=lambda: {"v": (5, 5), "a": (5, 5), "t": (5, 5)})
    noise_low: float = 0.1
    noise_high: float = 1.0
    label_marginals: Optional[List[float]] = None
    intensity_range: tuple = (0.5, 0.5)
    split_fractions: tuple = (0.7, 0.1, 0.2)
    seed: int = 0
    name: str = "synthetic"

    def validate(self) -> None:
        if self.n <= 0 or self.q <= 0:
            raise ValueError("n and q must be positive")
        if self.noise_low > self.noise_high or self.noise_low < 0:
            raise ValueError("need 0 <= noise_low <= noise_high")
        for p in self.marginals():
            if not 0.0 < p < 1.0:
                raise ValueError("label marginals must lie strictly inside (0, 1)")
        for m in "vat":
            lo, hi = self.seq_lens[m]
            if not 1 <= lo <= hi:
                raise ValueError(f"invalid sequence length range for {m}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def marginals(self) -> List[float]:
        if self.label_marginals is None:
            return [0.4] * self.q
        if len(self.label_marginals) != self.q:
            raise ValueError("label_marginals must have q entries")
        return list(self.label_marginals)


def planted_directions(config: SynthConfig) -> Dict[str, np.ndarray]:
    """Unit directions g[m][j] for every (modality, label), fixed by the seed."""
    rng = np.random.default_rng([config.seed, 0])
    out = {}
    for m in "vat":
        g = rng.standard_normal((config.q, config.dims[m]))
        out[m] = g / np.linalg.norm(g, axis=1, keepdims=True)
    return out


def synthesize(config: SynthConfig):
    """Generate samples in memory; returns (manifest, samples)."""
    config.validate()
    directions = planted_directions(config)
    rng = np.random.default_rng([config.seed, 1])
    marg = np.asarray(config.marginals())
    lo, hi = config.intensity_range
    width = len(str(config.n - 1))
    samples = []
    for i in range(config.n):
        labels = (rng.random(config.q) < marg).astype(np.int64)
        noise = float(rng.uniform(config.noise_low, config.noise_high))
        intensity = np.where(labels == 1, rng.uniform(lo, hi, config.q), 0.0)
        mats = {}
        for m, short in SHORT.items():
            s_lo, s_hi = config.seq_lens[short]
            length = int(rng.integers(s_lo, s_hi + 1))
            signal = intensity @ directions[short]
            frames = signal[None, :] + noise * rng.standard_normal(
                (length, config.dims[short]))
            mats[m] = frames
        samples.append(MultimodalSample(
            id=f"s{i:0{width}d}", labels=labels,
            meta={"noise": noise, "intensity": intensity.tolist()}, **mats))
    ids = [s.id for s in samples]
    n_train = int(round(config.split_fractions[0] * config.n))
    n_val = int(round(config.split_fractions[1] * config.n))
    manifest = DatasetManifest(
        name=config.name,
        q=config.q,
        label_names=[f"emotion_{j}" for j in range(config.q)],
        dims=dict(config.dims),
        splits={"train": ids[:n_train], "val": ids[n_train:n_train + n_val],
                "test": ids[n_train + n_val:]},
        aligned=False,
    )
    return manifest, samples


def generate_synthetic(config: SynthConfig, out_dir) -> SampleStore:
    """Write a planted-structure dataset to ``out_dir`` and load it back."""
    manifest, samples = synthesize(config)
    write_dataset(out_dir, manifest, samples)
    return load_dataset(out_dir)
