"""Row-aligned matchings between a source cloud and a target cloud.

Source row ``i`` is matched to target row ``i``. Matchings change only by
permuting target rows, so the target multiset is never altered.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.spatial import cKDTree

from .metrics import leaf_auctions
from .pointcloud import as_points


@dataclass
class MatchingState:
    """Target rows in their current order plus ``perm`` into the original cloud.

    ``rows == original[perm]`` always holds.
    """

    rows: np.ndarray
    perm: np.ndarray = None
    swap_log: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.array(as_points(self.rows), dtype=np.float64, copy=True)
        if self.perm is None:
            self.perm = np.arange(len(self.rows), dtype=np.int64)
        else:
            self.perm = np.asarray(self.perm, dtype=np.int64).copy()

    @classmethod
    def from_original(cls, original, perm) -> "MatchingState":
        original = as_points(original)
        return cls(original[np.asarray(perm)], perm)

    def __len__(self) -> int:
        return len(self.rows)

    def apply_gather(self, new_from_old) -> None:
        """Row ``i`` takes the contents of current row ``new_from_old[i]``."""
        self.rows = self.rows[new_from_old]
        self.perm = self.perm[new_from_old]

    def swap_rows(self, a, b) -> None:
        """Exchange rows ``a[k] <-> b[k]``; the index sets must be disjoint."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        self.rows[a], self.rows[b] = self.rows[b].copy(), self.rows[a].copy()
        self.perm[a], self.perm[b] = self.perm[b].copy(), self.perm[a].copy()


@dataclass(frozen=True)
class QapWeights:
    clamp_delta: float = 1e-9

    def __post_init__(self):
        if not self.clamp_delta > 0:
            raise ValueError("clamp_delta must be positive")


EXACT_QAP_CAP = 2048


def _qap_pairs(source, neighbor_cap, exact):
    m = len(source)
    if exact:
        if m > EXACT_QAP_CAP:
            raise ValueError(f"exact QAP energy is capped at M={EXACT_QAP_CAP}")
        i, j = np.nonzero(~np.eye(m, dtype=bool))
        return i, j
    k = min(neighbor_cap, m - 1)
    if k < 1:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    _, nn = cKDTree(source).query(source, k=k + 1)
    i = np.repeat(np.arange(m), k)
    j = nn[:, 1:].reshape(-1)
    return i, j


def qap_energy(source, state: MatchingState, weights: QapWeights = QapWeights(),
               neighbor_cap: int = 8, exact: bool = False) -> float:
    """Sum of ``f(q, q') * w(A q, A q')`` over ordered source pairs.

    ``f = 1 / max(w, clamp_delta)``. By default only each point's
    ``neighbor_cap`` nearest source neighbors are counted; ``exact`` sums all
    ordered pairs.
    """
    src = as_points(source)
    if len(src) != len(state):
        raise ValueError(f"size mismatch: {len(src)} source vs {len(state)} target rows")
    i, j = _qap_pairs(src, neighbor_cap, exact)
    w_src = np.linalg.norm(src[i] - src[j], axis=1)
    flow = 1.0 / np.maximum(w_src, weights.clamp_delta)
    w_tgt = np.linalg.norm(state.rows[i] - state.rows[j], axis=1)
    return float((flow * w_tgt).sum())


def brute_force_qap(source, target, weights: QapWeights = QapWeights()):
    """Exhaustive minimizer over all bijections (tiny M only)."""
    src = as_points(source)
    tgt = as_points(target)
    if len(src) > 8:
        raise ValueError("brute force QAP is limited to M <= 8")
    best, best_perm = np.inf, None
    for p in permutations(range(len(src))):
        e = qap_energy(src, MatchingState(tgt[list(p)]), weights, exact=True)
        if e < best:
            best, best_perm = e, np.array(p)
    return best_perm, best


def aligned_distances(source, state: MatchingState) -> np.ndarray:
    return np.linalg.norm(as_points(source) - state.rows, axis=1)


def _first_occurrence(keys) -> np.ndarray:
    """Positions of the first occurrence of every distinct key, in original order."""
    _, first = np.unique(keys, return_index=True)
    return np.sort(first)


def qaad_greedy(source, state: MatchingState, depth: int = 0, epsilon: float = 1.0,
                max_iterations: int = 100, seed=0, threads: int = 1) -> None:
    """Initial matching from per-leaf auctions, dedup by distance and random fill.

    Mutates ``state`` so that source row ``i`` aligns with its chosen target.
    Leaf-local random fill covers sources the capped auction left unassigned.
    """
    src = as_points(source)
    if len(src) != len(state):
        raise ValueError(f"size mismatch: {len(src)} source vs {len(state)} target rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gather = np.empty(len(src), dtype=np.int64)
    for s_leaf, t_leaf, sol in leaf_auctions(src, state.rows, depth, epsilon, max_iterations, threads):
        n = len(s_leaf)
        source_ids = np.flatnonzero(sol.assignment >= 0)
        match_ids = sol.assignment[source_ids]
        order = np.lexsort((source_ids, sol.distances[source_ids]))
        source_ids, match_ids = source_ids[order], match_ids[order]
        first = _first_occurrence(match_ids)
        source_ids, match_ids = source_ids[first], match_ids[first]

        rest_src = np.setdiff1d(np.arange(n), source_ids)
        rest_tgt = np.setdiff1d(np.arange(n), match_ids)
        rest_tgt = rng.permutation(rest_tgt)
        source_ids = np.concatenate([source_ids, rest_src])
        match_ids = np.concatenate([match_ids, rest_tgt])
        gather[s_leaf[source_ids]] = t_leaf[match_ids]
    state.apply_gather(gather)


def qaad_reassignment(source_sample_ids, target_query_ids, predictions, predict_fn,
                      state: MatchingState) -> int:
    """Swap target rows wherever a pairwise exchange strictly lowers the loss.

    ``predictions[k]`` is the model output for source row
    ``source_sample_ids[k]``; ``predict_fn(ids)`` evaluates the model for other
    source rows. Each prediction's nearest neighbor among the queried target
    rows proposes a swap with the source row currently matched to it. Only
    strict improvements are kept; per target the strongest decline wins, and a
    query row that is itself some proposal's partner is dropped. Returns the
    number of swaps applied.
    """
    s_ids = np.asarray(source_sample_ids, dtype=np.int64)
    t_ids = np.asarray(target_query_ids, dtype=np.int64)
    pred = np.asarray(predictions, dtype=np.float64)
    m = len(state)
    if pred.shape != (len(s_ids), 3):
        raise ValueError(f"predictions shape {pred.shape} does not match {len(s_ids)} ids")
    for name, ids in (("source_sample_ids", s_ids), ("target_query_ids", t_ids)):
        if ids.size and (ids.min() < 0 or ids.max() >= m):
            raise IndexError(f"{name} out of range [0, {m})")
    if len(s_ids) == 0 or len(t_ids) == 0:
        return 0
    rows = state.rows

    _, local = cKDTree(rows[t_ids]).query(pred, k=1)
    nn_ids = t_ids[local]
    pred_nn = np.asarray(predict_fn(nn_ids), dtype=np.float64)

    before = (np.linalg.norm(pred - rows[s_ids], axis=1)
              + np.linalg.norm(pred_nn - rows[nn_ids], axis=1))
    after = (np.linalg.norm(pred - rows[nn_ids], axis=1)
             + np.linalg.norm(pred_nn - rows[s_ids], axis=1))
    swap = after < before
    s_sel, nn_sel, decline = s_ids[swap], nn_ids[swap], (after - before)[swap]

    order = np.lexsort((s_sel, decline))
    s_sel, nn_sel = s_sel[order], nn_sel[order]
    first = _first_occurrence(nn_sel)
    s_sel, nn_sel = s_sel[first], nn_sel[first]

    exclusive = ~np.isin(s_sel, nn_sel)
    s_sel, nn_sel = s_sel[exclusive], nn_sel[exclusive]

    state.swap_rows(s_sel, nn_sel)
    return int(len(s_sel))
