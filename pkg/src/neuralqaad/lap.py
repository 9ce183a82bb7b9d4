"""Linear assignment: forward ε-auction on Euclidean costs and an exact Hungarian oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

HUNGARIAN_CAP = 512


@dataclass
class AuctionSolution:
    """Result of one auction run.

    ``assignment[i]`` is the target index bought by source ``i`` or -1 when the
    round cap was hit before ``i`` won an object. ``distances`` is NaN for
    unassigned sources.
    """

    assignment: np.ndarray
    distances: np.ndarray
    prices: np.ndarray
    epsilon: float
    iterations_run: int
    complete: bool

    @property
    def total_cost(self) -> float:
        return float(self.distances[self.assignment >= 0].sum())


@njit(cache=True, nogil=True)
def _auction_kernel(a, b, eps, max_rounds, price_trace):
    n = a.shape[0]
    prices = np.zeros(n)
    owner = -np.ones(n, dtype=np.int64)     # target -> source
    assigned = -np.ones(n, dtype=np.int64)  # source -> target
    queue = np.arange(n)
    n_queue = n
    nxt = np.empty(n, dtype=np.int64)
    rounds = 0
    while n_queue > 0 and rounds < max_rounds:
        n_next = 0
        for qi in range(n_queue):
            i = queue[qi]
            if assigned[i] >= 0:
                continue
            best = -np.inf
            second = -np.inf
            jbest = -1
            for j in range(n):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                dz = a[i, 2] - b[j, 2]
                v = -np.sqrt(dx * dx + dy * dy + dz * dz) - prices[j]
                if v > best:
                    second = best
                    best = v
                    jbest = j
                elif v > second:
                    second = v
            if n == 1:
                incr = eps
            else:
                incr = best - second + eps
            prices[jbest] += incr
            prev = owner[jbest]
            if prev >= 0:
                assigned[prev] = -1
                nxt[n_next] = prev
                n_next += 1
            owner[jbest] = i
            assigned[i] = jbest
        rounds += 1
        if price_trace.shape[0] > 0 and rounds <= price_trace.shape[0]:
            price_trace[rounds - 1, :] = prices
        for k in range(n_next):
            queue[k] = nxt[k]
        n_queue = n_next
    return assigned, prices, rounds


def _as_points(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def auction_assign(a, b, epsilon: float = 1.0, max_iterations: int = 100,
                   record_prices: bool = False):
    """Forward auction maximizing the benefit ``-||a_i - b_j||``.

    One iteration is one sweep in which every currently unassigned source bids
    once (Gauss-Seidel order). Distances are evaluated on the fly. When
    ``record_prices`` is set, also returns the ``(rounds, n)`` price history.
    """
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"size mismatch: {a.shape[0]} sources vs {b.shape[0]} targets")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n = a.shape[0]
    trace = np.zeros((max_iterations if record_prices else 0, n))
    assigned, prices, rounds = _auction_kernel(a, b, float(epsilon), int(max_iterations), trace)
    dist = np.full(n, np.nan)
    ok = assigned >= 0
    dist[ok] = np.linalg.norm(a[ok] - b[assigned[ok]], axis=1)
    sol = AuctionSolution(assigned, dist, prices, float(epsilon), int(rounds), bool(ok.all()))
    if record_prices:
        return sol, trace[:rounds]
    return sol


@njit(cache=True)
def _hungarian_kernel(c):
    # shortest augmenting path with potentials, 1-based bookkeeping
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm, u[1:].copy(), v[1:].copy()


def hungarian_assign(cost, cap: int = HUNGARIAN_CAP, return_duals: bool = False):
    """Exact minimum-cost perfect matching of a square cost matrix.

    Returns ``(perm, total)`` with ``perm[i]`` the column of row ``i``; with
    ``return_duals`` also the row/column potentials ``u, v`` satisfying
    ``u[i] + v[j] <= cost[i, j]`` with equality on the matching.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost must be square, got {c.shape}")
    n = c.shape[0]
    if n > cap:
        raise ValueError(f"n={n} exceeds the Hungarian oracle cap {cap}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix contains non-finite entries")
    if n == 0:
        perm, u, v = np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0)
    else:
        perm, u, v = _hungarian_kernel(c)
    total = float(c[np.arange(n), perm].sum())
    if return_duals:
        return perm, total, u, v
    return perm, total


def check_lap_certificate(cost, perm, u, v, tol: float = 1e-9) -> bool:
    """Dual feasibility plus complementary slackness for a claimed optimum."""
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    if sorted(np.asarray(perm).tolist()) != list(range(n)):
        return False
    reduced = c - u[:, None] - v[None, :]
    scale = tol * max(1.0, float(np.abs(c).max(initial=0.0)))
    if reduced.min(initial=0.0) < -scale:
        return False
    return bool(np.all(np.abs(reduced[np.arange(n), perm]) <= scale))


def pairwise_distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
