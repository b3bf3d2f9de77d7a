"""Amortized training over a corpus of instances."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .loss import PackedInstances, pack_instances, total_loss
from .model import InterventionVAE, ModelConfig, init_model
from .nn import load_module_arrays, module_arrays
from .scm import TrainingInstance
from .storage import load_tensors, save_tensors

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "total", "reconstruction", "kl", "grad_norm", "nan_count")
DIVERGENCE_PATIENCE = 10


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 2000
    learning_rate: float = 1e-3
    beta: float = 0.01
    seed: int = 42
    heads: int = 6
    e: int = 16
    c: int = 10
    layers: int = 4
    decoder_blocks: int = 2
    dropout: float = 0.1
    latent: int = 1
    vamp_components: int = 256  # few components collapse the posterior to a data-free point
    pseudo_samples: int = 16
    head_dim: int | None = None
    checkpoint_every: int | None = None  # epochs; None means every 10% of the run

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if self.learning_rate < 0 or self.beta < 0:
            raise ValueError("learning_rate and beta must be non-negative")
        if self.layers % 2:
            raise ValueError(f"encoder layer count must be even, got {self.layers}")

    def model_config(self, d: int, num_values: int = 1) -> ModelConfig:
        return ModelConfig(
            d=d,
            num_values=num_values,
            e=self.e,
            c=self.c,
            layers=self.layers,
            decoder_blocks=self.decoder_blocks,
            heads=self.heads,
            head_dim=self.head_dim,
            dropout=self.dropout,
            latent=self.latent,
            vamp_components=self.vamp_components,
            pseudo_samples=self.pseudo_samples,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


# (preset, expected d): reference hyperparameters per noise family, d and c
TRAIN_PRESETS: dict[str, tuple[TrainConfig, int]] = {
    "gaussian": (TrainConfig(batch_size=1800, epochs=20000, c=10, beta=0.01), 2),
    "gaussian1": (TrainConfig(batch_size=350, epochs=10000, c=1, beta=0.0005), 8),
    "gaussian10": (TrainConfig(batch_size=350, epochs=9650, c=10, beta=0.0005), 8),
    "beta": (TrainConfig(batch_size=1800, epochs=20000, c=10, beta=0.005), 2),
    "beta1": (TrainConfig(batch_size=350, epochs=10000, c=1, beta=0.0005), 8),
    "beta10": (TrainConfig(batch_size=350, epochs=9650, c=10, beta=0.0005), 8),
}


def desk_scale(cfg: TrainConfig, d: int) -> TrainConfig:
    """Shrink batch size and epochs for a single-CPU run."""
    if d <= 2:
        return replace(cfg, batch_size=64, epochs=2000)
    return replace(cfg, batch_size=32, epochs=300)


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """In-place Adam update with bias correction."""
    params = list(params)
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))
    return state


def zero_nonfinite_(grads) -> int:
    """Replace NaN/inf gradient entries with 0; returns how many were replaced."""
    count = 0
    with torch.no_grad():
        for g in grads:
            if g is None:
                continue
            bad = ~torch.isfinite(g)
            n = int(bad.sum())
            if n:
                g[bad] = 0.0
                count += n
    return count


@dataclass
class TrainResult:
    model: InterventionVAE
    log: list[dict]
    checkpoints: list[Path]


def save_checkpoint(path, model: InterventionVAE, meta: dict | None = None) -> Path:
    meta = dict(meta or {})
    meta["model_config"] = model.cfg.to_dict()
    return save_tensors(path, module_arrays(model), meta)


def load_checkpoint(path) -> tuple[InterventionVAE, dict]:
    arrays, meta = load_tensors(path)
    model = InterventionVAE(ModelConfig.from_dict(meta["model_config"]))
    if "prior.fixed_queries" in arrays:
        model.prior.fixed_queries = torch.as_tensor(arrays["prior.fixed_queries"])
    load_module_arrays(model, arrays)
    model.eval()
    return model, meta


def train(
    instances: Sequence[TrainingInstance] | PackedInstances,
    cfg: TrainConfig,
    num_values: int = 1,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minimize the batch-mean loss with Adam.

    Shuffling, initialization, dropout and latent draws all derive from
    ``cfg.seed``. Non-finite gradient entries are zeroed before each step.
    """
    packed = instances if isinstance(instances, PackedInstances) else None
    if packed is None:
        if not instances:
            raise ValueError("cannot train on an empty corpus")
        packed = pack_instances(instances, num_values)
    if len(packed) == 0:
        raise ValueError("cannot train on an empty corpus")
    d = packed.obs.shape[-1]
    num_values = packed.qmat.shape[-1]

    model = init_model(cfg.model_config(d, num_values), cfg.seed)
    params = [p for _, p in sorted(model.named_parameters())]
    state = AdamState()
    shuffle_rng = np.random.default_rng(cfg.seed)
    latent_gen = torch.Generator().manual_seed(cfg.seed)
    every = cfg.checkpoint_every or max(1, cfg.epochs // 10)
    meta = {"train_config": cfg.to_dict(), "seed": cfg.seed}

    rows: list[dict] = []
    ckpts: list[Path] = []
    bad_streak = 0
    log_file = None
    writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        writer.writeheader()
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = shuffle_rng.permutation(len(packed))
            sums = {"total": 0.0, "reconstruction": 0.0, "kl": 0.0, "grad_norm": 0.0}
            nan_count = 0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                idx = torch.as_tensor(order[start : start + cfg.batch_size])
                out = total_loss(model, packed.select(idx), cfg.beta, generator=latent_gen)
                grads = list(torch.autograd.grad(out.total, params, allow_unused=True))
                nan_count += zero_nonfinite_(grads)
                gnorm = math.sqrt(sum(float((g**2).sum()) for g in grads if g is not None))
                adam_step(params, grads, state, cfg.learning_rate)

                if math.isfinite(out.total.item()):
                    bad_streak = 0
                else:
                    bad_streak += 1
                    if bad_streak >= DIVERGENCE_PATIENCE:
                        raise TrainingDiverged(
                            f"loss non-finite for {bad_streak} consecutive steps at epoch {epoch}"
                        )
                for key, val in out.floats().items():
                    sums[key] += val
                sums["grad_norm"] += gnorm
                n_batches += 1
            row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}, "nan_count": nan_count}
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
                log_file.flush()
            if on_epoch is not None:
                on_epoch(row)
            if checkpoint_dir is not None and (epoch % every == 0 or epoch == cfg.epochs):
                path = Path(checkpoint_dir) / f"checkpoint-{epoch:06d}.ivckpt"
                save_checkpoint(path, model, {**meta, "epoch": epoch})
                ckpts.append(path)
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return TrainResult(model, rows, ckpts)
