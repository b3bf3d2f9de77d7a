"""Linear additive structural causal models, sampling and corpus assembly.

Every variable follows ``V_j = sum_i beta_ij V_i + eps_j`` with Gaussian or
Beta noise. Hard interventions clamp a variable and cut it off from its
parents and its noise.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ivrep import InterventionQuery

GAUSSIAN = "gaussian"
BETA = "beta"
FAMILIES = (GAUSSIAN, BETA)

GAUSSIAN_SIGMA = 0.5
WEIGHT_RANGE = (0.5, 2.0)
BETA_PARAM_RANGE = (0.5, 2.0)

# the three bivariate graphs: X -> Y, Y -> X, no edge
TWO_VAR_GRAPHS = (((0, 1),), ((1, 0),), ())


@dataclass(frozen=True)
class DagStructure:
    d: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("a DAG needs at least one variable")
        edges = tuple(sorted((int(i), int(j)) for i, j in self.edges))
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on {i}")
            if not (0 <= i < self.d and 0 <= j < self.d):
                raise ValueError(f"edge {(i, j)} out of range for d={self.d}")
        object.__setattr__(self, "edges", edges)
        self.topological_order()  # raises on cycles

    def parents(self, j: int) -> tuple[int, ...]:
        return tuple(i for i, k in self.edges if k == j)

    def topological_order(self) -> tuple[int, ...]:
        """Kahn's algorithm; ties go to the smallest index."""
        indeg = [0] * self.d
        children: list[list[int]] = [[] for _ in range(self.d)]
        for i, j in self.edges:
            indeg[j] += 1
            children[i].append(j)
        heap = [j for j in range(self.d) if indeg[j] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            i = heapq.heappop(heap)
            order.append(i)
            for j in children[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(heap, j)
        if len(order) != self.d:
            raise ValueError("graph contains a cycle")
        return tuple(order)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise of one variable: ``gaussian`` uses ``(sigma,)``, ``beta`` uses ``(alpha, beta)``."""

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family == GAUSSIAN:
            if len(self.params) != 1 or not self.params[0] > 0:
                raise ValueError(f"gaussian noise needs sigma > 0, got {self.params}")
        elif self.family == BETA:
            if len(self.params) != 2 or not min(self.params) > 0:
                raise ValueError(f"beta noise needs alpha, beta > 0, got {self.params}")
        else:
            raise ValueError(f"unknown noise family {self.family!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == GAUSSIAN:
            return rng.normal(0.0, self.params[0], size=n)
        return rng.beta(self.params[0], self.params[1], size=n)

    @property
    def mean(self) -> float:
        if self.family == GAUSSIAN:
            return 0.0
        a, b = self.params
        return a / (a + b)


@dataclass(frozen=True, eq=False)
class Scm:
    dag: DagStructure
    weights: np.ndarray  # weights[i, j] is the coefficient of edge i -> j
    noise: tuple[NoiseSpec, ...]
    interventions: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        d = self.dag.d
        w = np.array(self.weights, dtype=float)
        if w.shape != (d, d):
            raise ValueError(f"weights must be {d}x{d}")
        mask = np.zeros((d, d), dtype=bool)
        for i, j in self.dag.edges:
            mask[i, j] = True
        if np.any(w[~mask] != 0):
            raise ValueError("nonzero weight outside the DAG edges")
        if len(self.noise) != d:
            raise ValueError("one noise spec per variable required")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noise", tuple(self.noise))
        object.__setattr__(
            self, "interventions", {int(k): float(v) for k, v in dict(self.interventions).items()}
        )

    @property
    def d(self) -> int:
        return self.dag.d

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "edges": [list(e) for e in self.dag.edges],
            "weights": [float(self.weights[i, j]) for i, j in self.dag.edges],
            "noise": [{"family": n.family, "params": list(n.params)} for n in self.noise],
            "interventions": {str(k): v for k, v in self.interventions.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scm":
        dag = DagStructure(data["d"], tuple(tuple(e) for e in data["edges"]))
        w = np.zeros((dag.d, dag.d))
        for (i, j), b in zip(data["edges"], data["weights"]):
            w[i, j] = b
        noise = tuple(NoiseSpec(n["family"], tuple(n["params"])) for n in data["noise"])
        inter = {int(k): float(v) for k, v in data.get("interventions", {}).items()}
        return cls(dag, w, noise, inter)


@dataclass(frozen=True, eq=False)
class Dataset:
    """``values`` is N x d. ``query`` is None for observational data."""

    values: np.ndarray
    query: InterventionQuery | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"dataset must be a non-empty N x d matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("dataset contains non-finite entries")
        if self.query is not None and self.query.d != v.shape[1]:
            raise ValueError("query and data disagree on d")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def is_observational(self) -> bool:
        return self.query is None


@dataclass(frozen=True, eq=False)
class TrainingInstance:
    observational: Dataset
    interventional: tuple[Dataset, ...]
    scm_id: str
    scm: Scm | None = None

    def __post_init__(self):
        object.__setattr__(self, "interventional", tuple(self.interventional))
        d = self.observational.d
        keys = set()
        for ds in self.interventional:
            if ds.query is None:
                raise ValueError("interventional dataset without a query")
            if ds.d != d:
                raise ValueError("datasets of one instance must share d")
            key = (ds.query.value_index, ds.query.bitmask)
            if key in keys:
                raise ValueError(f"duplicate intervention {key} in instance {self.scm_id}")
            keys.add(key)

    @property
    def d(self) -> int:
        return self.observational.d

    @property
    def queries(self) -> tuple[InterventionQuery, ...]:
        return tuple(ds.query for ds in self.interventional)


def sample_dag(d: int, rng: np.random.Generator, edge_prob: float = 0.3) -> DagStructure:
    """Random DAG. d=2 draws one of the three bivariate graphs uniformly;
    larger d uses Erdos-Renyi edges over a random topological order."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        return DagStructure(1)
    if d == 2:
        return DagStructure(2, TWO_VAR_GRAPHS[rng.integers(3)])
    order = rng.permutation(d)
    edges = []
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < edge_prob:
                edges.append((int(order[a]), int(order[b])))
    return DagStructure(d, tuple(edges))


def sample_edge_weights(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform on [-2, -0.5] u [0.5, 2]."""
    lo, hi = WEIGHT_RANGE
    mag = rng.uniform(lo, hi, size=size)
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    return sign * mag


def sample_linear_scm(dag: DagStructure, family: str, rng: np.random.Generator) -> Scm:
    w = np.zeros((dag.d, dag.d))
    if dag.edges:
        vals = sample_edge_weights(rng, len(dag.edges))
        for (i, j), b in zip(dag.edges, vals):
            w[i, j] = b
    if family == GAUSSIAN:
        noise = tuple(NoiseSpec(GAUSSIAN, (GAUSSIAN_SIGMA,)) for _ in range(dag.d))
    elif family == BETA:
        ab = rng.uniform(*BETA_PARAM_RANGE, size=(dag.d, 2))
        noise = tuple(NoiseSpec(BETA, (float(a), float(b))) for a, b in ab)
    else:
        raise ValueError(f"unknown noise family {family!r}")
    return Scm(dag, w, noise)


def apply_intervention(scm: Scm, targets: Sequence[int], value: float) -> Scm:
    """Return a copy of ``scm`` with ``do(V_t = value)`` for every t in ``targets``.

    Re-intervening on a clamped variable replaces its old value.
    """
    targets = [int(t) for t in targets]
    if not targets:
        raise ValueError("an intervention needs at least one target")
    for t in targets:
        if not 0 <= t < scm.d:
            raise ValueError(f"target {t} out of range for d={scm.d}")
    inter = dict(scm.interventions)
    inter.update({t: float(value) for t in targets})
    return Scm(scm.dag, scm.weights, scm.noise, inter)


def sample_data(
    scm: Scm,
    n: int,
    rng: np.random.Generator,
    query: InterventionQuery | None = None,
    noise_scale: float = 1.0,
) -> Dataset:
    """Ancestral sampling of ``n`` rows.

    Noise is drawn for every variable in index order before propagation, so an
    intervened model sampled from the same rng state shares noise with its
    observational counterpart. ``noise_scale=0`` gives the noiseless test mode.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = scm.d
    noise = np.column_stack([spec.sample(rng, n) for spec in scm.noise]) * noise_scale
    x = np.zeros((n, d))
    for j in scm.dag.topological_order():
        if j in scm.interventions:
            x[:, j] = scm.interventions[j]
            continue
        x[:, j] = noise[:, j]
        for i in scm.dag.parents(j):
            x[:, j] += scm.weights[i, j] * x[:, i]
    return Dataset(x, query)


@dataclass(frozen=True)
class CorpusConfig:
    d: int
    count: int
    n_samples: int
    family: str = GAUSSIAN
    n_train: int | None = None  # defaults to 90% of count
    edge_prob: float = 0.3
    n_graphs: int | None = None  # distinct graphs reused across instances; None = fresh per instance
    intervention_values: tuple[float, ...] = (5.0,)

    def __post_init__(self):
        if self.d < 1 or self.count < 0 or self.n_samples < 1:
            raise ValueError(f"invalid corpus config {self}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.n_train is not None and not 0 <= self.n_train <= self.count:
            raise ValueError("n_train must lie in [0, count]")
        if not self.intervention_values:
            raise ValueError("need at least one intervention value")
        object.__setattr__(self, "intervention_values", tuple(float(v) for v in self.intervention_values))

    @property
    def train_count(self) -> int:
        return self.n_train if self.n_train is not None else int(round(0.9 * self.count))


CORPUS_PRESETS = {
    "gauss2var": CorpusConfig(d=2, count=6000, n_samples=50, family=GAUSSIAN, n_train=5400),
    "beta2var": CorpusConfig(d=2, count=6000, n_samples=50, family=BETA, n_train=5400),
    "gauss8var": CorpusConfig(d=8, count=30000, n_samples=30, family=GAUSSIAN, n_train=27000, n_graphs=2000),
    "beta8var": CorpusConfig(d=8, count=30000, n_samples=30, family=BETA, n_train=27000, n_graphs=2000),
    # 600 train + 100 test instances for single-CPU runs
    "gauss2var-desk": CorpusConfig(d=2, count=700, n_samples=50, family=GAUSSIAN, n_train=600),
    "beta2var-desk": CorpusConfig(d=2, count=700, n_samples=50, family=BETA, n_train=600),
}


@dataclass
class Corpus:
    config: CorpusConfig
    seed: int
    instances: list[TrainingInstance]
    train_ids: list[str]
    test_ids: list[str]

    def split(self, name: str) -> list[TrainingInstance]:
        ids = set(self.train_ids if name == "train" else self.test_ids)
        return [inst for inst in self.instances if inst.scm_id in ids]


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def make_instance(
    scm: Scm, config: CorpusConfig, rng: np.random.Generator, scm_id: str
) -> TrainingInstance:
    obs = sample_data(scm, config.n_samples, rng)
    inter = []
    for vi, value in enumerate(config.intervention_values, start=1):
        for j in range(scm.d):
            q = InterventionQuery.single(scm.d, j, vi)
            inter.append(sample_data(apply_intervention(scm, [j], value), config.n_samples, rng, q))
    return TrainingInstance(obs, tuple(inter), scm_id, scm)


def generate_corpus(config: CorpusConfig, seed: int) -> Corpus:
    """Build ``config.count`` instances, each with one observational dataset and
    one interventional dataset per (value, variable) pair.

    Instance k draws from its own stream keyed by ``(seed, k)``, so any
    instance can be regenerated independently.
    """
    graphs = None
    if config.n_graphs:
        graphs = [sample_dag(config.d, _stream(seed, 1, g), config.edge_prob) for g in range(config.n_graphs)]
    instances = []
    for k in range(config.count):
        rng = _stream(seed, 0, k)
        if graphs is None:
            dag = sample_dag(config.d, rng, config.edge_prob)
        else:
            dag = graphs[k % len(graphs)]
        scm = sample_linear_scm(dag, config.family, rng)
        instances.append(make_instance(scm, config, rng, f"scm-{k:06d}"))
    order = _stream(seed, 2).permutation(config.count)
    n_train = config.train_count
    train_ids = [instances[k].scm_id for k in sorted(order[:n_train])]
    test_ids = [instances[k].scm_id for k in sorted(order[n_train:])]
    return Corpus(config, seed, instances, train_ids, test_ids)
