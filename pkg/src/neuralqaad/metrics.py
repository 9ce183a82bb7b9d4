"""Point cloud distances: Chamfer, augmented Chamfer, exact EMD, EM-kD and the sampling normalizer."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .kdpartition import build_partition, leaf_pair_iter
from .lap import HUNGARIAN_CAP, auction_assign, hungarian_assign, pairwise_distances
from .pointcloud import as_points


@dataclass
class MetricReport:
    value: float
    kind: str
    depth: int | None = None
    epsilon: float | None = None
    normalizer: float | None = None

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)
        return ",".join([self.kind, fmt(self.value), fmt(self.depth),
                         fmt(self.epsilon), fmt(self.normalizer)])


CSV_HEADER = "kind,value,depth,epsilon,normalizer"


def _nonempty(p, q):
    p, q = as_points(p), as_points(q)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("Chamfer distances need non-empty clouds")
    return p, q


def directed_nn(p, q):
    """Nearest neighbor in ``q`` for every point of ``p``: ``(distances, indices)``."""
    d, i = cKDTree(q).query(p, k=1)
    return d, i


def chamfer_terms(p, q):
    """The two directed nearest-neighbor sums ``(p -> q, q -> p)``."""
    p, q = _nonempty(p, q)
    return float(directed_nn(p, q)[0].sum()), float(directed_nn(q, p)[0].sum())


def chamfer(p, q) -> float:
    a, b = chamfer_terms(p, q)
    return a + b


def aug_chamfer(p, q) -> float:
    return max(chamfer_terms(p, q))


def emd_exact_mean(p, q, cap: int = HUNGARIAN_CAP) -> float:
    """Optimal-bijection EMD divided by M (multiply by M for the summed form)."""
    p, q = as_points(p), as_points(q)
    if len(p) != len(q):
        raise ValueError(f"size mismatch: {len(p)} vs {len(q)}")
    _, total = hungarian_assign(pairwise_distances(p, q), cap=cap)
    return total / len(p)


def complete_greedily(a, b, assignment):
    """Give each unassigned source (in index order) its cheapest still-free target."""
    assignment = assignment.copy()
    free = np.ones(len(b), dtype=bool)
    free[assignment[assignment >= 0]] = False
    for i in np.flatnonzero(assignment < 0):
        cand = np.flatnonzero(free)
        j = cand[np.argmin(np.linalg.norm(b[cand] - a[i], axis=1))]
        assignment[i] = j
        free[j] = False
    return assignment


def leaf_auctions(p, q, depth: int, epsilon: float, max_iterations: int, threads: int = 1):
    """Run the auction on every canonical leaf pair. Returns ``[(src_ids, tgt_ids, solution)]``."""
    p, q = as_points(p), as_points(q)
    if len(p) != len(q):
        raise ValueError(f"size mismatch: {len(p)} vs {len(q)}")
    pairs = leaf_pair_iter(build_partition(p, depth), build_partition(q, depth))

    def run(pair):
        s, t = pair
        return s, t, auction_assign(p[s], q[t], epsilon, max_iterations)

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(run, pairs))
    return [run(pair) for pair in pairs]


def emkd(p, q, depth: int = 0, epsilon: float = 1.0, max_iterations: int = 100,
         threads: int = 1) -> MetricReport:
    """EMD upper bound from per-leaf auctions, averaged per leaf then across leaves.

    Sources left unassigned by a capped auction are completed greedily so the
    value always comes from a true bijection.
    """
    p, q = as_points(p), as_points(q)
    total = 0.0
    results = leaf_auctions(p, q, depth, epsilon, max_iterations, threads)
    for s, t, sol in results:
        assignment = sol.assignment if sol.complete else complete_greedily(p[s], q[t], sol.assignment)
        total += float(np.linalg.norm(p[s] - q[t][assignment], axis=1).mean())
    return MetricReport(total / len(results), "emkd", depth=depth, epsilon=float(epsilon))


def knn_distances(p, k: int) -> np.ndarray:
    """(M, k) distances to the k nearest other points."""
    p = as_points(p)
    if k >= len(p):
        raise ValueError(f"k={k} must be smaller than the cloud size {len(p)}")
    if k < 1:
        raise ValueError("k must be positive")
    d, _ = cKDTree(p).query(p, k=k + 1)
    return d[:, 1:]


def sampling_normalizer(p, k: int = 5) -> float:
    """Mean distance from each point to its k nearest neighbors."""
    return float(knn_distances(p, k).mean())


def normalized_log_aug_chamfer(p, q, k: int = 5) -> float:
    """``log(aug_chamfer(p, q) / T(q))``; ``-inf`` when the clouds coincide."""
    d = aug_chamfer(p, q)
    if d == 0.0:
        return -math.inf
    return math.log(d / sampling_normalizer(q, k))


def metric_report(p, q, kind: str, depth: int = 0, epsilon: float = 1.0,
                  max_iterations: int = 100, k: int = 5, threads: int = 1) -> MetricReport:
    if kind == "chamfer":
        return MetricReport(chamfer(p, q), kind)
    if kind == "aug_chamfer":
        return MetricReport(aug_chamfer(p, q), kind)
    if kind == "emd_exact_mean":
        return MetricReport(emd_exact_mean(p, q), kind)
    if kind == "emkd":
        return emkd(p, q, depth, epsilon, max_iterations, threads)
    if kind == "normalized_log_aug_chamfer":
        return MetricReport(normalized_log_aug_chamfer(p, q, k), kind,
                            normalizer=sampling_normalizer(q, k))
    raise ValueError(f"unknown metric kind {kind!r}")
