from dataclasses import replace

import numpy as np
import pytest

from intervene.scm import (
    BETA,
    CORPUS_PRESETS,
    GAUSSIAN,
    CorpusConfig,
    DagStructure,
    NoiseSpec,
    Scm,
    apply_intervention,
    generate_corpus,
    sample_dag,
    sample_data,
    sample_edge_weights,
    sample_linear_scm,
)


def kahn_is_acyclic(d, edges):
    """Independent acyclicity oracle."""
    indeg = {j: 0 for j in range(d)}
    for _, j in edges:
        indeg[j] += 1
    ready = [j for j in range(d) if indeg[j] == 0]
    seen = 0
    while ready:
        i = ready.pop()
        seen += 1
        for a, b in edges:
            if a == i:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
    return seen == d


def chain(beta=1.0, sigma=0.5):
    dag = DagStructure(2, ((0, 1),))
    w = np.array([[0.0, beta], [0.0, 0.0]])
    return Scm(dag, w, (NoiseSpec(GAUSSIAN, (sigma,)),) * 2)


def test_two_var_dag_draws_exactly_three_shapes():
    shapes = {sample_dag(2, np.random.default_rng(s)).edges for s in range(200)}
    assert shapes == {((0, 1),), ((1, 0),), ()}


def test_single_variable_dag_is_empty():
    assert sample_dag(1, np.random.default_rng(0)).edges == ()


@pytest.mark.parametrize("seed", range(20))
def test_eight_var_dag_is_acyclic(seed):
    dag = sample_dag(8, np.random.default_rng(seed), edge_prob=0.3)
    assert kahn_is_acyclic(8, dag.edges)
    assert len(set(dag.edges)) == len(dag.edges)
    assert all(i != j for i, j in dag.edges)


def test_dag_rejects_cycles_and_self_loops():
    with pytest.raises(ValueError):
        DagStructure(3, ((0, 1), (1, 2), (2, 0)))
    with pytest.raises(ValueError):
        DagStructure(2, ((1, 1),))
    with pytest.raises(ValueError):
        DagStructure(2, ((0, 1), (0, 1)))


def test_topological_order_breaks_ties_by_index():
    assert DagStructure(4, ((3, 0),)).topological_order() == (1, 2, 3, 0)


def test_gaussian_chain_scm():
    scm = sample_linear_scm(DagStructure(2, ((0, 1),)), GAUSSIAN, np.random.default_rng(1))
    b = scm.weights[0, 1]
    assert 0.5 <= abs(b) <= 2.0
    assert scm.weights[1, 0] == 0
    assert all(n.family == GAUSSIAN and n.params == (0.5,) for n in scm.noise)


def test_beta_empty_dag_scm():
    scm = sample_linear_scm(DagStructure(2), BETA, np.random.default_rng(2))
    assert not scm.weights.any()
    for n in scm.noise:
        assert n.family == BETA
        assert all(0.5 <= p <= 2.0 for p in n.params)


def test_edge_weight_distribution():
    w = sample_edge_weights(np.random.default_rng(0), 10_000)
    assert np.all((np.abs(w) >= 0.5) & (np.abs(w) <= 2.0))
    counts, _ = np.histogram(w, bins=[-2, -1.5, -1, -0.5, 0.5, 1, 1.5, 2])
    assert counts[3] == 0
    # six bins of equal length, each with probability 1/6
    expected = 10_000 / 6
    sd = np.sqrt(10_000 * (1 / 6) * (5 / 6))
    for c in np.delete(counts, 3):
        assert abs(c - expected) < 5 * sd


def test_weight_range_over_many_scms():
    rng = np.random.default_rng(3)
    ws = []
    while len(ws) < 100_000:
        scm = sample_linear_scm(sample_dag(8, rng, 0.5), GAUSSIAN, rng)
        ws.extend(scm.weights[i, j] for i, j in scm.dag.edges)
    ws = np.abs(ws)
    assert ws.min() >= 0.5 and ws.max() <= 2.0


def test_variance_propagation():
    x = sample_data(chain(1.0), 100_000, np.random.default_rng(0)).values
    var = x.var(axis=0, ddof=1)
    # Var(X) = 0.25, Var(Y) = 1^2 * 0.25 + 0.25
    np.testing.assert_allclose(var, [0.25, 0.5], rtol=0.05)


def test_intervention_clamps_column():
    scm = apply_intervention(chain(), [0], 5.0)
    x = sample_data(scm, 37, np.random.default_rng(0)).values
    assert np.all(x[:, 0] == 5.0)


def test_no_edge_columns_uncorrelated():
    scm = Scm(DagStructure(2), np.zeros((2, 2)), (NoiseSpec(GAUSSIAN, (0.5,)),) * 2)
    x = sample_data(scm, 100_000, np.random.default_rng(4)).values
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.05


def test_apply_intervention_is_pure_and_replaces():
    scm = chain()
    a = apply_intervention(scm, [0], 5.0)
    b = apply_intervention(a, [0], -1.0)
    assert scm.interventions == {}
    assert a.interventions == {0: 5.0}
    assert b.interventions == {0: -1.0}
    np.testing.assert_array_equal(b.weights, scm.weights)
    with pytest.raises(ValueError):
        apply_intervention(scm, [], 5.0)
    with pytest.raises(ValueError):
        apply_intervention(scm, [2], 5.0)


def test_intervened_chain_mean():
    noise = (NoiseSpec(BETA, (2.0, 0.5)), NoiseSpec(BETA, (0.7, 1.3)))
    scm = Scm(DagStructure(2, ((0, 1),)), np.array([[0, -1.7], [0, 0]]), noise)
    x = sample_data(apply_intervention(scm, [0], 0.0), 100_000, np.random.default_rng(5)).values
    expected = -1.7 * 0.0 + 0.7 / 2.0
    se = x[:, 1].std(ddof=1) / np.sqrt(len(x))
    assert abs(x[:, 1].mean() - expected) < 3 * se


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_samples_solve_linear_equations(seed):
    rng = np.random.default_rng(seed)
    scm = sample_linear_scm(sample_dag(8, rng, 0.4), GAUSSIAN, rng)
    roots = [j for j in range(8) if not scm.dag.parents(j)]
    for r in roots:
        scm = apply_intervention(scm, [r], float(rng.normal()))
    x = sample_data(scm, 20, rng, noise_scale=0.0).values
    for j in range(8):
        if j in scm.interventions:
            continue
        pred = np.zeros(20)
        for i in scm.dag.parents(j):
            pred = pred + scm.weights[i, j] * x[:, i]
        np.testing.assert_allclose(x[:, j], pred, rtol=0, atol=1e-12)


def test_intervention_cuts_parent_dependence():
    scm = apply_intervention(chain(1.5), [1], 5.0)
    x = sample_data(scm, 100_000, np.random.default_rng(6)).values
    # the clamped column is constant, so its covariance with the parent vanishes
    cov = np.cov(x.T)[0, 1]
    r = cov / np.sqrt(np.var(x[:, 0]) * max(np.var(x[:, 1]), 1e-300))
    assert np.var(x[:, 1]) == 0
    assert abs(r) < 0.05


def test_same_rng_state_reproduces_bytes():
    scm = chain()
    a = sample_data(scm, 100, np.random.default_rng(11)).values
    b = sample_data(scm, 100, np.random.default_rng(11)).values
    assert a.tobytes() == b.tobytes()


def test_two_var_corpus_protocol():
    corpus = generate_corpus(CORPUS_PRESETS["gauss2var"], seed=42)
    assert len(corpus.instances) == 6000
    assert len(corpus.train_ids) == 5400 and len(corpus.test_ids) == 600
    assert not set(corpus.train_ids) & set(corpus.test_ids)
    for inst in corpus.instances[:50]:
        assert inst.observational.values.shape == (50, 2)
        assert len(inst.interventional) == 2
        for j, ds in enumerate(inst.interventional):
            assert ds.values.shape == (50, 2)
            assert ds.query.value_index == 1
            assert ds.query.target_indices == (j,)
            assert np.all(ds.values[:, j] == 5.0)
    shapes = {inst.scm.dag.edges for inst in corpus.instances}
    assert shapes == {((0, 1),), ((1, 0),), ()}


def test_empty_corpus():
    corpus = generate_corpus(replace(CORPUS_PRESETS["gauss2var"], count=0, n_train=0), seed=1)
    assert corpus.instances == [] and corpus.train_ids == [] and corpus.test_ids == []


def test_eight_var_protocol():
    cfg = CORPUS_PRESETS["gauss8var"]
    assert (cfg.count, cfg.n_samples, cfg.train_count, cfg.n_graphs) == (30_000, 30, 27_000, 2000)
    # same protocol on a smaller count keeps every graph in use twice
    small = generate_corpus(replace(cfg, count=4000, n_train=3600), seed=3)
    graphs = {}
    for inst in small.instances:
        graphs.setdefault(inst.scm.dag.edges, []).append(inst)
        assert inst.observational.values.shape == (30, 8)
        assert len(inst.interventional) == 8
    assert len(graphs) <= 2000
    same = [insts for insts in graphs.values() if len(insts) > 1][0]
    assert not np.array_equal(same[0].scm.weights, same[1].scm.weights)


def test_corpus_is_reproducible_and_instance_streams_independent():
    cfg = CorpusConfig(d=3, count=5, n_samples=10, family=BETA)
    a = generate_corpus(cfg, seed=9)
    b = generate_corpus(replace(cfg, count=8), seed=9)
    for x, y in zip(a.instances, b.instances):
        assert x.observational.values.tobytes() == y.observational.values.tobytes()
