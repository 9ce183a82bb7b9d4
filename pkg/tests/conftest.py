import itertools

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_assignment(cost):
    """Minimum over all permutations; returns (perm, total)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    best, best_perm = np.inf, None
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        total = cost[rows, perm].sum()
        if total < best:
            best, best_perm = total, perm
    return np.array(best_perm), float(best)


def brute_distances(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def brute_chamfer_terms(p, q):
    d = brute_distances(p, q)
    return d.min(axis=1).sum(), d.min(axis=0).sum()


def brute_knn_mean(p, k):
    d = brute_distances(p, p)
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, :k].mean()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        status, title, seconds = results[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {title}  ({seconds:.1f}s)")
