"""Run configuration dataclasses and deterministic RNG stream derivation.

Every source of randomness (splitting, negative sampling, masking, init,
dropout, ...) draws from its own labeled stream derived from the single
run seed, so components stay reproducible independently of each other.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np


def substream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Generator for the (seed, label, *extra) stream; stable across runs."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, *map(int, extra)]))


@dataclass
class LossConfig:
    alpha: float = 0.5          # balance between (pos+neg) and margin terms
    delta: float = 1.0          # margin
    epsilon: float = 1e-8       # stabilizer inside the positive log
    tau: float = 1.0            # contrastive temperature
    beta: float = 0.05          # contrastive weight
    mask_ratio: float = 0.4
    aug_threshold: int = 3      # minimum group size for augmentation

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.delta < 0.0:
            raise ValueError("delta must be >= 0")
        if self.tau <= 0.0:
            raise ValueError("tau must be > 0")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in (0, 1)")
        if self.aug_threshold < 2:
            raise ValueError("aug_threshold must be >= 2")
        return self


@dataclass
class TrainConfig:
    embedding_dim: int = 32
    layers: int = 3
    heads: int = 4
    ff_dim: int = 0             # 0 -> 4 * embedding_dim
    dropout: float = 0.2
    epochs: int = 200
    batch_size: int = 64        # positives per batch; negatives ride along
    lr: float = 2e-3
    seed: int = 0
    train_neg_per_pos: int = 4
    early_stop_patience: int = 10
    task_mix: float = 1.0       # user batches per group batch
    eval_negatives: int = 100
    no_margin: bool = False     # ablation: force alpha = 1
    no_contrastive: bool = False  # ablation: force beta = 0
    contrastive_pool_includes_item: bool = False
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        if self.embedding_dim % self.heads != 0:
            raise ValueError("embedding_dim must be divisible by heads")
        if not self.no_contrastive and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when contrastive is enabled")
        self.loss.validate()
        return self

    @property
    def effective_ff_dim(self) -> int:
        return self.ff_dim if self.ff_dim > 0 else 4 * self.embedding_dim

    def effective_alpha(self) -> float:
        return 1.0 if self.no_margin else self.loss.alpha

    def effective_beta(self) -> float:
        return 0.0 if self.no_contrastive else self.loss.beta

    def to_dict(self) -> dict:
        d = asdict(self)
        loss = d.pop("loss")
        d.update(loss)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss_names = {f.name for f in fields(LossConfig)}
        loss_kwargs = {k: d.pop(k) for k in list(d) if k in loss_names}
        own_names = {f.name for f in fields(cls)} - {"loss"}
        kwargs = {k: v for k, v in d.items() if k in own_names}
        unknown = set(d) - own_names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(loss=LossConfig(**loss_kwargs), **kwargs)
