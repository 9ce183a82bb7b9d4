import numpy as np
import pytest

from conftest import brute_distances, brute_force_assignment
from neuralqaad.lap import (auction_assign, check_lap_certificate, hungarian_assign,
                            pairwise_distances)


def test_auction_identical_sets(rng):
    a = rng.normal(size=(40, 3))
    sol = auction_assign(a, a, epsilon=1e-6, max_iterations=10**6)
    assert sol.complete
    np.testing.assert_array_equal(sol.assignment, np.arange(40))
    assert sol.total_cost == 0.0


def test_auction_two_points_identity():
    a = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    sol = auction_assign(a, a.copy(), epsilon=0.1)
    np.testing.assert_array_equal(sol.assignment, [0, 1])


def test_auction_within_n_eps_of_optimum(rng):
    for eps in (1e-3, 1e-2, 0.1):
        a, b = rng.uniform(size=(50, 3)), rng.uniform(size=(50, 3))
        sol = auction_assign(a, b, epsilon=eps, max_iterations=10**6)
        _, opt = hungarian_assign(brute_distances(a, b))
        assert sol.complete
        assert opt - 1e-9 <= sol.total_cost <= opt + 50 * eps


def test_auction_epsilon_complementary_slackness(rng):
    a, b = rng.normal(size=(60, 3)), rng.normal(size=(60, 3))
    eps = 0.05
    sol = auction_assign(a, b, epsilon=eps, max_iterations=10**6)
    d = brute_distances(a, b)
    values = -d - sol.prices[None, :]
    chosen = values[np.arange(60), sol.assignment]
    assert np.all(chosen >= values.max(axis=1) - eps - 1e-12)
    np.testing.assert_allclose(sol.distances, d[np.arange(60), sol.assignment])


def test_auction_prices_non_decreasing(rng):
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    sol, trace = auction_assign(a, b, epsilon=1e-3, max_iterations=10**5, record_prices=True)
    assert len(trace) == sol.iterations_run
    assert np.all(np.diff(trace, axis=0) >= 0)


def test_auction_cap_leaves_injective_partial(rng):
    a, b = rng.uniform(size=(200, 3)), rng.uniform(size=(200, 3))
    sol = auction_assign(a, b, epsilon=1e-6, max_iterations=2)
    assert not sol.complete
    got = sol.assignment[sol.assignment >= 0]
    assert len(np.unique(got)) == len(got)
    assert np.all(np.isnan(sol.distances[sol.assignment < 0]))


def test_auction_errors():
    with pytest.raises(ValueError, match="size mismatch"):
        auction_assign(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        auction_assign(np.array([[np.nan, 0, 0]]), np.zeros((1, 3)))


def test_hungarian_diagonal_zero():
    c = np.ones((5, 5)) - np.eye(5)
    perm, total = hungarian_assign(c)
    np.testing.assert_array_equal(perm, np.arange(5))
    assert total == 0.0


def test_hungarian_3x3():
    c = np.array([[4, 1, 3], [2, 0, 5], [3, 2, 2]], dtype=float)
    _, brute = brute_force_assignment(c)
    assert brute == 5.0
    perm, total = hungarian_assign(c)
    assert total == 5.0


@pytest.mark.parametrize("n", range(1, 9))
def test_hungarian_matches_brute_force(n, rng):
    for _ in range(3 if n == 8 else 20):
        c = rng.uniform(0, 10, size=(n, n))
        _, brute = brute_force_assignment(c)
        perm, total, u, v = hungarian_assign(c, return_duals=True)
        assert total == pytest.approx(brute, abs=1e-12)
        assert check_lap_certificate(c, perm, u, v)


def test_hungarian_certificate_large(rng):
    c = brute_distances(rng.normal(size=(256, 3)), rng.normal(size=(256, 3)))
    perm, total, u, v = hungarian_assign(c, return_duals=True)
    assert check_lap_certificate(c, perm, u, v)
    # a non-optimal permutation fails the certificate
    bad = perm.copy()
    bad[[0, 1]] = bad[[1, 0]]
    if c[np.arange(256), bad].sum() > total + 1e-9:
        assert not check_lap_certificate(c, bad, u, v)


def test_hungarian_errors():
    with pytest.raises(ValueError, match="cap"):
        hungarian_assign(np.zeros((600, 600)))
    with pytest.raises(ValueError, match="non-finite"):
        hungarian_assign(np.array([[np.inf]]))
    with pytest.raises(ValueError, match="square"):
        hungarian_assign(np.zeros((2, 3)))


def test_pairwise_distances(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(pairwise_distances(a, b), brute_distances(a, b))
