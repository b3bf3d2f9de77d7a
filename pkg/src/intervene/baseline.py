"""Conditioning baseline: fit one Gaussian to observational data, condition on
the targets taking the intervention value, clamp the targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ivrep import InterventionQuery

JITTER = 1e-8


@dataclass(frozen=True, eq=False)
class Mvn:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]


def _with_jitter(cov: np.ndarray) -> np.ndarray:
    """Return ``cov`` if Cholesky succeeds, else ``cov + JITTER * I`` (checked again)."""
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        cov = cov + JITTER * np.eye(cov.shape[0])
        np.linalg.cholesky(cov)  # raises if the jitter was not enough
        return cov


def fit_mvn(data) -> Mvn:
    """Sample mean and covariance (N - 1 denominator)."""
    x = np.asarray(getattr(data, "values", data), dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("fitting an MVN needs an (N, d) matrix with N >= 2")
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    try:
        cov = _with_jitter(cov)
    except np.linalg.LinAlgError:
        raise ValueError("sample covariance is not positive semi-definite even after jitter") from None
    return Mvn(x.mean(axis=0), cov)


def condition_mvn(m: Mvn, targets: Sequence[int], values) -> Mvn:
    """Distribution of the non-target coordinates given ``x[targets] = values``.

    Coordinates of the result follow the original order with targets removed.
    """
    b = sorted(int(t) for t in targets)
    if len(set(b)) != len(b) or any(not 0 <= t < m.d for t in b):
        raise ValueError(f"invalid targets {targets} for d={m.d}")
    a = [j for j in range(m.d) if j not in b]
    if not b:
        return Mvn(m.mean.copy(), m.cov.copy())
    v = np.broadcast_to(np.asarray(values, dtype=float), (len(b),))
    s_bb = m.cov[np.ix_(b, b)]
    try:
        s_bb = _with_jitter(s_bb)
    except np.linalg.LinAlgError:
        raise ValueError("conditioning block is singular beyond jitter rescue") from None
    s_ab = m.cov[np.ix_(a, b)]
    gain = np.linalg.solve(s_bb, s_ab.T).T  # S_ab S_bb^-1
    mean = m.mean[a] + gain @ (v - m.mean[b])
    cov = m.cov[np.ix_(a, a)] - gain @ s_ab.T
    return Mvn(mean, 0.5 * (cov + cov.T))


def _sample_mvn(m: Mvn, n: int, rng: np.random.Generator) -> np.ndarray:
    if m.d == 0:
        return np.zeros((n, 0))
    try:
        chol = np.linalg.cholesky(_with_jitter(m.cov))
    except np.linalg.LinAlgError:
        w, q = np.linalg.eigh(m.cov)
        chol = q * np.sqrt(np.clip(w, 0, None))
    return m.mean + rng.standard_normal((n, m.d)) @ chol.T


def sample_baseline(m: Mvn, query: InterventionQuery, value: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n rows from the conditional and write ``value`` into the target columns."""
    if query.d != m.d:
        raise ValueError("query does not match the fitted dimension")
    targets = query.target_indices
    cond = condition_mvn(m, targets, value)
    free = [j for j in range(m.d) if j not in targets]
    out = np.empty((n, m.d))
    out[:, free] = _sample_mvn(cond, n, rng)
    out[:, list(targets)] = value
    return out
