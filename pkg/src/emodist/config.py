"""Flat key-value run configuration.

Every field of :class:`TrainConfig` corresponds to a dotted key in a config
file (``scl.tau`` <-> ``scl_tau``). Files may be YAML or JSON mappings.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .encoders import EncoderConfig

SEED_ENV = "EMODIST_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    loss_lambda: float = 0.1
    loss_beta: float = 0.8
    loss_gamma: float = 0.1

    optim_lr: float = 2e-5
    optim_warmup: float = 0.1
    optim_grad_clip: float = 0.0
    train_epochs: int = 30
    train_batch_size: int = 128
    train_seed: int = 0
    train_dtype: str = "float32"
    data_max_len: int = 512
    eval_threshold: float = 0.5

    encoder_layers_v: int = 3
    encoder_layers_a: int = 3
    encoder_layers_t: int = 3
    encoder_width: int = 256
    encoder_heads: int = 4
    encoder_ff_width: int = 512
    encoder_dropout: float = 0.1

    emotion_space_d_h: int = 128
    emotion_space_proj_dim: int = 256
    esm_enabled: bool = True
    info_hidden: int = 256

    scl_enabled: bool = True
    scl_tau: float = 0.1
    scl_queue_size: int = 8192
    scl_use_mu_only: bool = False
    scl_use_sigma_only: bool = False
    scl_cross_modal: bool = False
    scl_reduction: str = "sum"

    fusion_hidden: int = 256
    fusion_swap_gate: bool = False
    fusion_detach_gate: bool = True
    cls_drop_mu: bool = False
    cls_drop_sigma: bool = False

    ocl_enabled: bool = True
    ocl_only_sr: bool = False
    ocl_only_dr: bool = False
    ocl_use_ds: bool = False
    ocl_temperature: float = 1.0
    ocl_normalize: str = "none"

    def validate(self) -> "TrainConfig":
        for name in ("loss_lambda", "loss_beta", "loss_gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{key_of(name)} must be >= 0")
        if self.optim_lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if self.train_epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.train_batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not 0 <= self.optim_warmup < 1:
            raise ConfigError("optim.warmup must lie in [0, 1)")
        if self.scl_tau <= 0:
            raise ConfigError("scl.tau must be positive")
        if self.emotion_space_d_h % 2:
            raise ConfigError("emotion_space.d_h must be even")
        if self.scl_use_mu_only and self.scl_use_sigma_only:
            raise ConfigError("scl.use_mu_only and scl.use_sigma_only are exclusive")
        if self.cls_drop_mu and self.cls_drop_sigma:
            raise ConfigError("cls.drop_mu and cls.drop_sigma are exclusive")
        if self.ocl_only_sr and self.ocl_only_dr:
            raise ConfigError("ocl.only_sr and ocl.only_dr are exclusive")
        if self.scl_reduction not in ("sum", "mean"):
            raise ConfigError("scl.reduction must be sum or mean")
        if self.ocl_normalize not in ("none", "zscore", "zscore_sr"):
            raise ConfigError("ocl.normalize must be none, zscore or zscore_sr")
        if self.ocl_temperature <= 0:
            raise ConfigError("ocl.temperature must be positive")
        if self.train_dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        try:
            self.encoder().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            layers_v=self.encoder_layers_v, layers_a=self.encoder_layers_a,
            layers_t=self.encoder_layers_t, width=self.encoder_width,
            heads=self.encoder_heads, ff_width=self.encoder_ff_width,
            dropout=self.encoder_dropout, max_len=self.data_max_len)

    @property
    def scl_active(self) -> bool:
        return self.scl_enabled and self.loss_beta > 0

    @property
    def ocl_active(self) -> bool:
        return self.ocl_enabled and self.loss_lambda > 0

    @property
    def scl_keep(self) -> str:
        if self.scl_use_mu_only:
            return "mu"
        if self.scl_use_sigma_only:
            return "sigma"
        return "both"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_flat(self) -> dict:
        return {key_of(f.name): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in (flat or {}).items():
            name = key.replace(".", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(known[name], value, key)
        return cls(**kwargs).validate()


def key_of(name: str) -> str:
    for prefix in ("emotion_space", "encoder_layers"):
        if name.startswith(prefix + "_"):
            return prefix.replace("_layers", ".layers") + "." + name[len(prefix) + 1:]
    head, _, tail = name.partition("_")
    return f"{head}.{tail}"


def _coerce(f, value, key):
    kind = type(f.default)
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("true", "1", "yes")
            return bool(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Read a flat config file, apply overrides and the seed environment variable."""
    flat = {}
    if path is not None:
        try:
            flat = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(flat, dict):
            raise ConfigError("config file must be a flat mapping")
    flat = dict(flat)
    flat.update(overrides or {})
    if os.environ.get(SEED_ENV):
        flat["train.seed"] = int(os.environ[SEED_ENV])
    return TrainConfig.from_flat(flat)
