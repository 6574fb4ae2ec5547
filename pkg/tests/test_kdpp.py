from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from stvgp.errors import ConfigError, NumericalError, ShapeError
from stvgp.kdpp import (
    KDPPConfig,
    SwapChain,
    init_inducing,
    kdpp_sample,
    kdpp_sample_matrix,
    matrix_chain,
    median_lengthscale,
    unique_rows,
)


def random_psd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + 0.1 * np.eye(n)


def exact_kdpp(L, k):
    subsets = list(combinations(range(L.shape[0]), k))
    dets = np.array([np.linalg.det(L[np.ix_(s, s)]) for s in subsets])
    return subsets, dets / dets.sum()


def test_full_subset_when_k_equals_n(rng):
    L = random_psd(rng, 6)
    np.testing.assert_array_equal(kdpp_sample_matrix(L, 6, 100, rng), np.arange(6))
    np.testing.assert_array_equal(kdpp_sample(rng.normal(size=(4, 3)), KDPPConfig(k=4)), np.arange(4))


def test_k_above_n_rejected(rng):
    with pytest.raises(ConfigError):
        kdpp_sample(rng.normal(size=(3, 2)), KDPPConfig(k=4))
    with pytest.raises(ConfigError):
        KDPPConfig(k=0)
    with pytest.raises(ConfigError):
        KDPPConfig(mcmc_steps=-1)


def test_two_point_diagonal_frequencies():
    chain = matrix_chain(np.diag([2.0, 1.0]), 1, np.random.default_rng(0))
    chain.run(1000)
    counts = Counter(s for s in chain.states(20000))
    assert counts[(0,)] / 20000 == pytest.approx(2 / 3, abs=0.02)


def test_chain_matches_exact_enumeration():
    rng = np.random.default_rng(1)
    L = random_psd(rng, 5)
    subsets, p = exact_kdpp(L, 2)
    chain = matrix_chain(L, 2, rng)
    counts = Counter(chain.states(50000))
    freq = np.array([counts[s] for s in subsets]) / 50000
    assert 0.5 * np.abs(freq - p).sum() < 0.05


def test_incremental_ratio_matches_determinants(rng):
    L = random_psd(rng, 8)
    chain = matrix_chain(L, 4, rng)
    for _ in range(20):
        p = int(rng.integers(4))
        j = int(rng.choice(np.flatnonzero(~chain.member)))
        S = chain.S.copy()
        S2 = S.copy()
        S2[p] = j
        direct = np.linalg.det(L[np.ix_(S2, S2)]) / np.linalg.det(L[np.ix_(S, S)])
        assert chain.swap_ratio(p, j) == pytest.approx(direct, rel=1e-8, abs=1e-12)
        chain.step()


def test_inverse_stays_accurate_after_many_swaps(rng):
    L = random_psd(rng, 30)
    chain = matrix_chain(L, 10, rng, refresh_every=10**9)
    chain.run(2000)
    S = chain.S
    np.testing.assert_allclose(chain.C, np.linalg.inv(L[np.ix_(S, S)]), atol=1e-8)


def test_non_pd_start_is_numerical_error():
    L = np.ones((3, 3))
    with pytest.raises(NumericalError):
        SwapChain(3, 2, lambda j, idx: L[j, idx].copy(), np.ones(3), np.random.default_rng(0))


def test_non_square_rejected():
    with pytest.raises(ShapeError):
        matrix_chain(np.ones((2, 3)), 1, np.random.default_rng(0))


def test_k1_selection_proportional_to_diagonal():
    L = np.diag([3.0, 1.0, 2.0])
    picks = Counter(int(kdpp_sample_matrix(L, 1, 30, np.random.default_rng(s))[0]) for s in range(3000))
    freq = np.array([picks[i] for i in range(3)]) / 3000
    np.testing.assert_allclose(freq, [0.5, 1 / 6, 1 / 3], atol=0.03)


def test_seed_determinism(rng):
    X = rng.normal(size=(200, 3))
    cfg = KDPPConfig(k=20, mcmc_steps=500, seed=4)
    np.testing.assert_array_equal(kdpp_sample(X, cfg), kdpp_sample(X, cfg))


def test_init_inducing_returns_input_rows(rng):
    X = rng.normal(size=(300, 7))
    Z, rows = init_inducing(X, KDPPConfig(k=25, mcmc_steps=300))
    assert Z.shape == (25, 7)
    np.testing.assert_array_equal(Z, X[rows])
    assert len(set(rows.tolist())) == 25


def test_duplicates_removed_before_sampling():
    X = np.ones((10, 3))
    Z, rows = init_inducing(X, KDPPConfig(k=1, mcmc_steps=10))
    assert Z.shape == (1, 3)
    with pytest.raises(ConfigError):
        init_inducing(X, KDPPConfig(k=2))


def test_pool_subsampling(rng):
    X = rng.normal(size=(500, 2))
    Z, rows = init_inducing(X, KDPPConfig(k=10, mcmc_steps=100, pool_size=50))
    assert len(rows) == 10


def test_unique_rows_keeps_first_occurrence():
    X = np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    np.testing.assert_array_equal(unique_rows(X), [0, 1, 3])


def test_median_lengthscale(rng):
    X = np.array([[0.0], [1.0]])
    assert median_lengthscale(X, 100, rng) == pytest.approx(1.0)
    assert median_lengthscale(np.zeros((1, 2)), 10, rng) == 1.0
