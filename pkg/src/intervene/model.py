"""Conditional transformer VAE mapping (observational data, intervention) to a
Gaussian mixture over the interventional distribution.

Shapes used throughout: ``B`` batch of (dataset, query) pairs, ``N`` samples,
``d`` variables, ``e`` embedding width, ``l`` latent channels per variable,
``c`` mixture components, ``I`` number of intervention values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .ivrep import InterventionQuery, encode_intervention
from .nn import DTYPE, AlternatingAttention, LayerNorm, RowMLP, TransformerBlock, linear

LOG_2PI = math.log(2 * math.pi)
COV_JITTER = 5e-5


@dataclass(frozen=True)
class ModelConfig:
    d: int
    num_values: int = 1
    e: int = 16
    c: int = 10
    layers: int = 4  # encoder attention blocks, alternating d / N axis
    decoder_blocks: int = 2
    heads: int = 6
    head_dim: int | None = None
    dropout: float = 0.1
    latent: int = 1
    vamp_components: int = 256  # few components collapse the posterior to a data-free point
    pseudo_samples: int = 16
    cov_rank: int | None = None  # width of the covariance factor u; defaults to e
    jitter: float = COV_JITTER

    def __post_init__(self):
        if self.layers % 2:
            raise ValueError(f"encoder layer count must be even, got {self.layers}")
        for name in ("d", "num_values", "e", "c", "heads", "latent", "vamp_components", "pseudo_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class LatentPosterior:
    mean: torch.Tensor  # (B, d, l)
    log_var: torch.Tensor  # (B, d, l)

    def log_prob(self, z):
        """Diagonal Gaussian log-density summed over (d, l); returns (B,)."""
        return diag_normal_log_prob(z, self.mean, self.log_var).sum((-1, -2))


@dataclass
class GaussianMixture:
    log_weights: torch.Tensor  # (B, c)
    means: torch.Tensor  # (B, c, d)
    covs: torch.Tensor  # (B, c, d, d)

    @property
    def weights(self):
        return self.log_weights.exp()

    @property
    def c(self) -> int:
        return self.means.shape[-2]

    @property
    def d(self) -> int:
        return self.means.shape[-1]

    def __getitem__(self, idx) -> "GaussianMixture":
        return GaussianMixture(self.log_weights[idx], self.means[idx], self.covs[idx])

    def component_log_prob(self, x):
        """``x`` is (B, n, d); returns (B, n, c) per-component log-densities."""
        chol = torch.linalg.cholesky(self.covs)  # (B, c, d, d)
        diff = x.unsqueeze(-2) - self.means.unsqueeze(-3)  # (B, n, c, d)
        y = torch.linalg.solve_triangular(chol.unsqueeze(-4), diff.unsqueeze(-1), upper=False).squeeze(-1)
        half_logdet = torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(-1)  # (B, c)
        return -0.5 * (y**2).sum(-1) - half_logdet.unsqueeze(-2) - 0.5 * self.d * LOG_2PI

    def log_prob(self, x):
        """Mixture log-density of (B, n, d) points; returns (B, n)."""
        return torch.logsumexp(self.component_log_prob(x) + self.log_weights.unsqueeze(-2), dim=-1)

    def mean(self):
        return (self.weights.unsqueeze(-1) * self.means).sum(-2)

    def sample(self, n: int, generator: torch.Generator | None = None):
        """Ancestral draw: component index, then Gaussian. Returns (B, n, d)."""
        with torch.no_grad():
            B = self.means.shape[0]
            comp = torch.multinomial(self.weights, n, replacement=True, generator=generator)  # (B, n)
            chol = torch.linalg.cholesky(self.covs)
            idx = torch.arange(B).unsqueeze(-1)
            mu = self.means[idx, comp]  # (B, n, d)
            L = chol[idx, comp]  # (B, n, d, d)
            eps = torch.randn(B, n, self.d, 1, dtype=self.means.dtype, generator=generator)
            return mu + (L @ eps).squeeze(-1)


def diag_normal_log_prob(z, mean, log_var):
    return -0.5 * ((z - mean) ** 2 * torch.exp(-log_var) + log_var + LOG_2PI)


def query_matrix(queries: Sequence[InterventionQuery], num_values: int, d: int) -> torch.Tensor:
    """Stack intervention matrices for a batch of queries into (B, d, I)."""
    mats = np.stack([encode_intervention(q, num_values, d) for q in queries])
    return torch.as_tensor(mats, dtype=DTYPE)


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float64) if not torch.is_tensor(x) else x, dtype=DTYPE)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = linear(1 + cfg.num_values, cfg.e)
        self.attention = AlternatingAttention(cfg.e, cfg.heads, cfg.layers, cfg.dropout, cfg.head_dim)
        self.norm = LayerNorm(cfg.e)
        self.head = RowMLP([cfg.e, cfg.e, 2 * cfg.latent])

    def forward(self, data, qmat) -> LatentPosterior:
        B, N, d = data.shape
        if qmat.shape != (B, d, self.cfg.num_values):
            raise ValueError(f"query matrix shape {tuple(qmat.shape)} does not fit data {tuple(data.shape)}")
        x = torch.cat([data.unsqueeze(-1), qmat.unsqueeze(1).expand(B, N, d, -1)], dim=-1)
        h = self.norm(self.attention(self.embed(x)))
        out = self.head(h.mean(dim=1))  # (B, d, 2l)
        return LatentPosterior(out[..., : self.cfg.latent], out[..., self.cfg.latent :])


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rank = cfg.cov_rank or cfg.e
        self.rank = rank
        self.embed = linear(cfg.latent + cfg.num_values, cfg.e)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.e, cfg.heads, cfg.dropout, head_dim=cfg.head_dim) for _ in range(cfg.decoder_blocks)
        )
        self.norm = LayerNorm(cfg.e)
        self.mean_head = linear(cfg.e, cfg.c)
        self.factor_head = linear(cfg.e, cfg.c * rank)
        self.weight_head = linear(cfg.e, cfg.c)

    def forward(self, z, qmat) -> GaussianMixture:
        B, d, _ = z.shape
        if z.shape[-1] != self.cfg.latent or qmat.shape != (B, d, self.cfg.num_values):
            raise ValueError(f"decoder got z {tuple(z.shape)} and query {tuple(qmat.shape)}")
        h = self.embed(torch.cat([z, qmat], dim=-1))
        for block in self.blocks:
            h = block(h)
        h = self.norm(h)  # (B, d, e)
        means = self.mean_head(h).transpose(-1, -2)  # (B, c, d)
        u = self.factor_head(h).view(B, d, self.cfg.c, self.rank).transpose(1, 2)  # (B, c, d, r)
        eye = torch.eye(d, dtype=h.dtype)
        covs = u @ u.transpose(-1, -2) + self.cfg.jitter * eye
        log_w = torch.log_softmax(self.weight_head(h.mean(dim=1)), dim=-1)
        return GaussianMixture(log_w, means, covs)


class VampPrior(nn.Module):
    """Uniform mixture of encoder posteriors at K learnable pseudo-inputs.

    Pseudo-queries are relaxed: ``sigmoid(logits)`` is fed where a real query
    has its 0/1 intervention matrix. ``freeze_to`` pins a component to a real
    (dataset, query) pair.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        K, n, d = cfg.vamp_components, cfg.pseudo_samples, cfg.d
        self.pseudo_data = nn.Parameter(torch.randn(K, n, d, dtype=DTYPE))
        self.pseudo_query_logits = nn.Parameter(torch.zeros(K, d, cfg.num_values, dtype=DTYPE))
        self.register_buffer("fixed_queries", None)

    def pseudo_queries(self):
        if self.fixed_queries is not None:
            return self.fixed_queries
        return torch.sigmoid(self.pseudo_query_logits)

    @classmethod
    def freeze_to(cls, cfg: ModelConfig, data, qmat) -> "VampPrior":
        """One component whose pseudo-input is the given (N, d) data and (d, I) query matrix."""
        prior = cls(ModelConfig(**{**cfg.to_dict(), "vamp_components": 1, "pseudo_samples": data.shape[0]}))
        with torch.no_grad():
            prior.pseudo_data.copy_(as_tensor(data).unsqueeze(0))
        prior.fixed_queries = as_tensor(qmat).unsqueeze(0).clone()
        prior.requires_grad_(False)
        return prior

    def components(self, encoder: Encoder) -> LatentPosterior:
        return encoder(self.pseudo_data, self.pseudo_queries())

    def log_prob(self, z, encoder: Encoder):
        """log (1/K) sum_k q(z | pseudo-input k) for z of shape (B, d, l); returns (B,)."""
        comp = self.components(encoder)
        lp = diag_normal_log_prob(z.unsqueeze(1), comp.mean.unsqueeze(0), comp.log_var.unsqueeze(0))
        lp = lp.sum((-1, -2))  # (B, K)
        return torch.logsumexp(lp, dim=-1) - math.log(lp.shape[-1])


def reparameterize(post: LatentPosterior, generator: torch.Generator | None = None, noise=None):
    """``z = mean + exp(log_var / 2) * noise`` with standard normal noise."""
    if noise is None:
        noise = torch.randn(post.mean.shape, dtype=post.mean.dtype, generator=generator)
    return post.mean + torch.exp(0.5 * post.log_var) * noise


class InterventionVAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.prior = VampPrior(cfg)

    def encode(self, data, qmat) -> LatentPosterior:
        return self.encoder(data, qmat)

    def decode(self, z, qmat) -> GaussianMixture:
        return self.decoder(z, qmat)

    def vamp_log_prior(self, z):
        return self.prior.log_prob(z, self.encoder)

    def forward(self, data, qmat, generator=None, noise=None):
        post = self.encode(data, qmat)
        z = reparameterize(post, generator, noise)
        return post, z, self.decode(z, qmat)

    @torch.no_grad()
    def predict(self, data, queries: Sequence[InterventionQuery], generator=None, z_mode: str = "sample"):
        """Mixture estimate for one (N, d) dataset and several queries.

        ``z_mode="mean"`` decodes the posterior mean instead of a sample.
        """
        data = as_tensor(data)
        qmat = query_matrix(queries, self.cfg.num_values, data.shape[-1])
        batch = data.unsqueeze(0).expand(len(queries), *data.shape)
        post = self.encode(batch, qmat)
        z = post.mean if z_mode == "mean" else reparameterize(post, generator)
        return self.decode(z, qmat)


def init_model(cfg: ModelConfig, seed: int) -> InterventionVAE:
    torch.manual_seed(seed)
    return InterventionVAE(cfg)
