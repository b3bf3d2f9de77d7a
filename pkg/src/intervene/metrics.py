"""Two-sample distances between empirical distributions and an energy permutation test.

All estimators take ``(m, d)`` and ``(n, d)`` sample matrices. Inputs are put
in a canonical order before computing so that ``f(X, Y) == f(Y, X)`` holds
bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist, pdist

MAX_EXACT_TRANSPORT = 200
DEFAULT_PERMUTATIONS = 100


@dataclass
class MetricsReport:
    mmd: float
    wsd: float
    erg: float
    p_value: float
    bandwidth: float
    n_perm: int

    def to_dict(self) -> dict:
        return asdict(self)


def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected an (m, d) sample matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    return x


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_samples(x), _as_samples(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if (y.shape[0], y.tobytes()) < (x.shape[0], x.tobytes()):
        x, y = y, x
    return x, y


def median_heuristic(pooled) -> float:
    """Median Euclidean distance over all distinct pairs; 0 when every point coincides."""
    pooled = _as_samples(pooled)
    if pooled.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    return float(np.median(pdist(pooled)))


def rbf_bandwidth(x, y) -> float:
    sigma = median_heuristic(np.vstack([x, y]))
    return sigma if sigma > 0 else 1.0


def mmd(x, y, bandwidth: float | None = None) -> float:
    """RBF-kernel MMD with the biased (V-statistic) estimate of MMD^2; returns its square root.

    The bandwidth defaults to the median heuristic on the pooled samples, with
    1.0 as fallback when all points coincide.
    """
    x, y = _pair(x, y)
    sigma = rbf_bandwidth(x, y) if bandwidth is None else bandwidth
    gamma = 1.0 / (2.0 * sigma**2)
    kxx = np.exp(-gamma * cdist(x, x, "sqeuclidean")).mean()
    kyy = np.exp(-gamma * cdist(y, y, "sqeuclidean")).mean()
    kxy = np.exp(-gamma * cdist(x, y, "sqeuclidean")).mean()
    return float(np.sqrt(max(kxx + kyy - 2.0 * kxy, 0.0)))


def wasserstein(x, y, max_size: int = MAX_EXACT_TRANSPORT) -> float:
    """Exact 1-Wasserstein distance with Euclidean ground cost.

    Equal sizes are solved as an assignment problem; unequal sizes as the
    transport linear program with uniform marginals.
    """
    x, y = _pair(x, y)
    m, n = x.shape[0], y.shape[0]
    if max(m, n) > max_size:
        raise ValueError(f"exact transport limited to {max_size} points per set, got {m} and {n}")
    cost = cdist(x, y)
    if m == n:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / m)
    # plan[i, j] flattened row-major; row sums 1/m, column sums 1/n
    a_rows = np.kron(np.eye(m), np.ones((1, n)))
    a_cols = np.kron(np.ones((1, m)), np.eye(n))
    res = linprog(
        cost.ravel(),
        A_eq=np.vstack([a_rows, a_cols]),
        b_eq=np.concatenate([np.full(m, 1.0 / m), np.full(n, 1.0 / n)]),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _energy_from_distances(dist: np.ndarray, idx_x: np.ndarray, idx_y: np.ndarray) -> float:
    dxy = dist[np.ix_(idx_x, idx_y)].mean()
    dxx = dist[np.ix_(idx_x, idx_x)].mean()
    dyy = dist[np.ix_(idx_y, idx_y)].mean()
    return float(dxy - 0.5 * dxx - 0.5 * dyy)


def energy_distance(x, y) -> float:
    """``E|X-Y| - E|X-X'|/2 - E|Y-Y'|/2`` with all-pairs means (diagonal included)."""
    x, y = _pair(x, y)
    pooled = np.vstack([x, y])
    m = x.shape[0]
    return _energy_from_distances(cdist(pooled, pooled), np.arange(m), np.arange(m, pooled.shape[0]))


def permutation_test(x, y, n_perm: int = DEFAULT_PERMUTATIONS, rng: np.random.Generator | None = None) -> float:
    """Energy-distance permutation test; ``p = (1 + #{D_perm >= D_obs}) / (n_perm + 1)``."""
    x, y = _pair(x, y)
    rng = np.random.default_rng() if rng is None else rng
    pooled = np.vstack([x, y])
    dist = cdist(pooled, pooled)
    m, total = x.shape[0], pooled.shape[0]
    observed = _energy_from_distances(dist, np.arange(m), np.arange(m, total))
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(total)
        if _energy_from_distances(dist, perm[:m], perm[m:]) >= observed:
            hits += 1
    return (1 + hits) / (n_perm + 1)


def compare(x, y, n_perm: int = DEFAULT_PERMUTATIONS, rng: np.random.Generator | None = None) -> MetricsReport:
    x, y = _pair(x, y)
    return MetricsReport(
        mmd=mmd(x, y),
        wsd=wasserstein(x, y),
        erg=energy_distance(x, y),
        p_value=permutation_test(x, y, n_perm, rng),
        bandwidth=rbf_bandwidth(x, y),
        n_perm=n_perm,
    )
