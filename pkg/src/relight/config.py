"""Training configuration for both stages, plus YAML config-file support.

One tree-structured config file drives every CLI command; command-line flags
override file values. Schedules are pure functions of the epoch/iteration so
they can be table-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .lum import LumLossWeights
from .ndm import NdmLossWeights

__all__ = [
    "LumTrainConfig",
    "NdmTrainConfig",
    "lum_learning_rate",
    "ndm_learning_rate",
    "load_config_file",
    "make_lum_config",
    "make_ndm_config",
]


@dataclass
class LumTrainConfig:
    epochs: int = 60
    batch_size: int = 16
    patch_size: int = 48
    steps_per_epoch: int | None = None  # default: dataset size / batch size
    lr: float = 1e-4
    lr_decay_epochs: tuple[int, ...] = (20, 40)
    lr_decay_factor: float = 10.0
    weight_decay: float = 1e-4
    channels: int = 64
    seed: int = 0
    hep_reference: str = "equalized"
    prior: str = "HEP"
    lambda_hep: float = 0.1
    lambda_is: float = 0.1
    epsilon: float = 0.01
    use_recon: bool = True
    use_is: bool = True
    use_prior: bool = True
    augment: bool = True
    workers: int = 1

    def loss_weights(self) -> LumLossWeights:
        return LumLossWeights(self.lambda_hep, self.lambda_is, self.epsilon)

    def arch_spec(self) -> dict:
        return {"stage": "lum", "channels": self.channels}


@dataclass
class NdmTrainConfig:
    iterations: int = 10000
    batch_size: int = 16
    patch_size: int = 64
    lr: float = 1e-4
    lr_decay_iterations: int = 10000
    beta1: float = 0.9
    weight_decay: float = 1e-4
    base_channels: int = 64
    noise_dim: int = 8
    seed: int = 0
    noise_source: str = "prior"
    disc_steps: int = 1
    label_real: float = 1.0
    label_fake: float = 0.0
    lambda_kl: float = 0.01
    lambda_per: float = 0.1
    lambda_col: float = 0.5
    lambda_bc: float = 5.0
    lambda_cc: float = 10.0
    lambda_rec: float = 10.0
    disabled_losses: tuple[str, ...] = ()
    augment: bool = True
    workers: int = 1

    def loss_weights(self) -> NdmLossWeights:
        return NdmLossWeights(
            self.lambda_kl, self.lambda_per, self.lambda_col,
            self.lambda_bc, self.lambda_cc, self.lambda_rec,
        )

    def arch_spec(self) -> dict:
        return {
            "stage": "ndm",
            "base_channels": self.base_channels,
            "noise_dim": self.noise_dim,
            "labels": [self.label_fake, self.label_real],
            "disc_steps": self.disc_steps,
        }


def lum_learning_rate(config: LumTrainConfig, epoch: int) -> float:
    """Step schedule: divide by the decay factor after each boundary epoch
    (epochs are 1-indexed)."""
    drops = sum(1 for boundary in config.lr_decay_epochs if epoch > boundary)
    return config.lr / config.lr_decay_factor**drops


def ndm_learning_rate(config: NdmTrainConfig, iteration: int) -> float:
    """Exponential decay: one decade over `lr_decay_iterations` iterations."""
    return config.lr * 10.0 ** (-iteration / config.lr_decay_iterations)


def load_config_file(path) -> dict:
    """Read the tree-structured YAML config; returns {} for a missing section."""
    with open(Path(path)) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping, got {type(data).__name__}")
    return data


def _build(cls, section: dict, overrides: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    cfg = cls(**merged)
    for name in ("lr_decay_epochs", "disabled_losses"):
        if hasattr(cfg, name):
            setattr(cfg, name, tuple(getattr(cfg, name)))
    return cfg


def make_lum_config(file_data: dict | None = None, **overrides) -> LumTrainConfig:
    return _build(LumTrainConfig, (file_data or {}).get("lum", {}), overrides)


def make_ndm_config(file_data: dict | None = None, **overrides) -> NdmTrainConfig:
    return _build(NdmTrainConfig, (file_data or {}).get("ndm", {}), overrides)
