import numpy as np
import pytest

from intervene.baseline import JITTER, Mvn, condition_mvn, fit_mvn, sample_baseline
from intervene.ivrep import InterventionQuery
from intervene.metrics import permutation_test


def test_fit_two_points():
    m = fit_mvn([[0.0], [2.0]])
    assert m.mean.tolist() == [1.0]
    assert m.cov.tolist() == [[2.0]]


def test_fit_constant_column_gets_jitter():
    m = fit_mvn([[1.0, 3.0], [2.0, 3.0], [4.0, 3.0]])
    assert m.cov[1, 1] == JITTER
    np.linalg.cholesky(m.cov)


def test_fit_recovers_parameters():
    mu = np.array([1.0, -2.0, 3.0])
    cov = np.array([[2.0, 0.6, 0.3], [0.6, 1.0, -0.2], [0.3, -0.2, 1.5]])
    x = np.random.default_rng(0).multivariate_normal(mu, cov, size=100_000)
    m = fit_mvn(x)
    np.testing.assert_allclose(m.mean, mu, rtol=0.02)
    np.testing.assert_allclose(np.diag(m.cov), np.diag(cov), rtol=0.02)
    assert np.allclose(m.cov, m.cov.T, atol=1e-10)


def test_fit_rejects_single_row():
    with pytest.raises(ValueError):
        fit_mvn([[1.0, 2.0]])


def test_diagonal_conditioning_is_marginal():
    m = Mvn(np.array([1.0, 2.0, 3.0]), np.diag([1.0, 2.0, 3.0]))
    c = condition_mvn(m, [1], 10.0)
    np.testing.assert_array_equal(c.mean, [1.0, 3.0])
    np.testing.assert_array_equal(c.cov, np.diag([1.0, 3.0]))


def test_textbook_bivariate():
    m = Mvn(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    c = condition_mvn(m, [1], 5.0)
    assert c.mean[0] == pytest.approx(2.5, abs=1e-12)
    assert c.cov[0, 0] == pytest.approx(0.75, abs=1e-12)


def rejection_mean(m: Mvn, b: list[int], v: np.ndarray, rng, n_keep=4000, width=0.05):
    """Empirical mean of the free coordinates among joint draws whose targets land within ``width`` of ``v``."""
    a = [j for j in range(m.d) if j not in b]
    kept = []
    while sum(len(k) for k in kept) < n_keep:
        x = rng.multivariate_normal(m.mean, m.cov, size=200_000)
        near = np.all(np.abs(x[:, b] - v) < width, axis=1)
        kept.append(x[near][:, a])
    kept = np.vstack(kept)
    return kept.mean(0), kept.std(0, ddof=1) / np.sqrt(len(kept))


def test_bivariate_matches_rejection_oracle():
    m = Mvn(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    # v=5 is 5 sd out; a wider window is needed for enough accepted draws, so use v=1.5
    mean, se = rejection_mean(m, [1], np.array([1.5]), np.random.default_rng(0), width=0.02)
    assert abs(mean[0] - condition_mvn(m, [1], 1.5).mean[0]) < 3 * se[0]


def test_condition_on_everything():
    m = Mvn(np.array([1.0, 2.0]), np.eye(2))
    c = condition_mvn(m, [0, 1], 5.0)
    assert c.d == 0
    out = sample_baseline(m, InterventionQuery(1, (1, 1)), 5.0, 4, np.random.default_rng(0))
    assert np.all(out == 5.0)


def test_empty_targets_return_fitted_mvn():
    m = Mvn(np.array([1.0, 2.0]), np.array([[1.0, 0.3], [0.3, 2.0]]))
    c = condition_mvn(m, [], [])
    np.testing.assert_array_equal(c.mean, m.mean)
    np.testing.assert_array_equal(c.cov, m.cov)
    assert c.mean is not m.mean


def test_independent_do_keeps_marginal():
    m = Mvn(np.array([0.0, 1.0]), np.diag([1.0, 0.25]))
    y = sample_baseline(m, InterventionQuery.single(2, 0), 5.0, 100_000, np.random.default_rng(1))[:, 1]
    n = len(y)
    assert abs(y.mean() - 1.0) < 3 * 0.5 / np.sqrt(n)
    assert abs(y.var(ddof=1) - 0.25) < 3 * 0.25 * np.sqrt(2 / (n - 1))


def test_target_columns_clamped():
    m = fit_mvn(np.random.default_rng(2).normal(size=(30, 4)))
    out = sample_baseline(m, InterventionQuery(1, (0, 1, 0, 1)), -3.5, 17, np.random.default_rng(3))
    assert np.all(out[:, [1, 3]] == -3.5)
    assert np.all(out[:, [0, 2]] != -3.5)


def test_correlated_do_mean():
    m = Mvn(np.zeros(2), np.array([[1.0, 0.5], [0.5, 1.0]]))
    y = sample_baseline(m, InterventionQuery.single(2, 1), 5.0, 100_000, np.random.default_rng(4))[:, 0]
    assert abs(y.mean() - 2.5) < 3 * y.std(ddof=1) / np.sqrt(len(y))


def test_uncorrelated_data_baseline_matches_observational_marginal():
    rng = np.random.default_rng(5)
    obs = rng.normal(size=(1000, 2)) * [1.0, 0.5]
    m = Mvn(obs.mean(0), np.diag(obs.var(0, ddof=1)))
    draws = sample_baseline(m, InterventionQuery.single(2, 0), 5.0, 1000, rng)
    assert permutation_test(draws[:, 1:], obs[:, 1:], 100, np.random.default_rng(0)) > 0.05
