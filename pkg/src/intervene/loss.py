"""Conditional ELBO: mixture reconstruction term, VAMP KL term, beta-weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .model import DTYPE, GaussianMixture, InterventionVAE, LatentPosterior, query_matrix, reparameterize
from .scm import TrainingInstance


@dataclass
class LossBreakdown:
    total: torch.Tensor
    reconstruction: torch.Tensor
    kl: torch.Tensor
    rec_pairs: torch.Tensor  # (P,) per (instance, intervention) pair
    kl_pairs: torch.Tensor  # (P,)

    def floats(self) -> dict:
        return {"total": self.total.item(), "reconstruction": self.reconstruction.item(), "kl": self.kl.item()}


@dataclass
class PackedInstances:
    """Tensors for M instances with k interventions each, all sharing N and d."""

    obs: torch.Tensor  # (M, N, d)
    qmat: torch.Tensor  # (M, k, d, I)
    targets: torch.Tensor  # (M, k, N_int, d)

    def __len__(self):
        return self.obs.shape[0]

    def select(self, idx) -> "PackedInstances":
        return PackedInstances(self.obs[idx], self.qmat[idx], self.targets[idx])

    def pairs(self):
        """Flatten to P = M*k (dataset, query, target-data) pairs."""
        M, k = self.qmat.shape[:2]
        obs = self.obs.unsqueeze(1).expand(M, k, *self.obs.shape[1:]).reshape(M * k, *self.obs.shape[1:])
        return obs, self.qmat.reshape(M * k, *self.qmat.shape[2:]), self.targets.reshape(M * k, *self.targets.shape[2:])

    def permuted_variables(self, perm) -> "PackedInstances":
        perm = list(perm)
        return PackedInstances(self.obs[..., perm], self.qmat[..., perm, :], self.targets[..., perm])


def pack_instances(instances: Sequence[TrainingInstance], num_values: int) -> PackedInstances:
    if not instances:
        raise ValueError("nothing to pack")
    d = instances[0].d
    k = len(instances[0].interventional)
    for inst in instances:
        if inst.d != d or len(inst.interventional) != k:
            raise ValueError("instances must share d and the number of interventions")
        if k == 0:
            raise ValueError(f"instance {inst.scm_id} has no interventional data")
    obs = np.stack([inst.observational.values for inst in instances])
    targets = np.stack([np.stack([ds.values for ds in inst.interventional]) for inst in instances])
    qmat = torch.stack([query_matrix(inst.queries, num_values, d) for inst in instances])
    return PackedInstances(torch.as_tensor(obs, dtype=DTYPE), qmat, torch.as_tensor(targets, dtype=DTYPE))


def mixture_log_prob(gm: GaussianMixture, x):
    """log sum_k w_k N(x; mu_k, Sigma_k) for x of shape (B, n, d)."""
    return gm.log_prob(x)


def reconstruction_loss(gm: GaussianMixture, targets):
    """Negative mean log-likelihood of each pair's interventional samples; returns (B,)."""
    return -mixture_log_prob(gm, targets).mean(-1)


def kl_term(post: LatentPosterior, z, log_prior):
    """Single-sample estimate ``log q(z | .) - log p(z)`` per pair; returns (B,)."""
    return post.log_prob(z) - log_prior


def total_loss(model: InterventionVAE, batch: PackedInstances, beta: float, generator=None, noise=None) -> LossBreakdown:
    """Batch loss: per instance, average reconstruction and KL over its
    interventions, then average over instances. One latent draw per pair,
    shared by both terms. ``noise`` (P, d, l) fixes the draws."""
    obs, qmat, targets = batch.pairs()
    post = model.encode(obs, qmat)
    z = reparameterize(post, generator, noise)
    gm = model.decode(z, qmat)
    rec = reconstruction_loss(gm, targets)
    kl = kl_term(post, z, model.vamp_log_prior(z))
    rec_mean, kl_mean = rec.mean(), kl.mean()
    return LossBreakdown(rec_mean + beta * kl_mean, rec_mean, kl_mean, rec, kl)
