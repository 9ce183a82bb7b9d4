"""Balanced k-d partitions with canonical leaf order.

Each internal node splits along the axis of largest coordinate spread. Points
are ordered by (coordinate, original index) and the left child takes the first
``ceil(n / 2)``, so two clouds with the same M always produce leaves of
pairwise equal size. Leaves come out in left-to-right depth-first order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud import as_points


@dataclass(frozen=True)
class KdPartition:
    depth: int
    leaves: tuple          # 2**depth sorted int64 index arrays
    split_axes: tuple      # pre-order over internal nodes
    split_values: tuple

    @property
    def leaf_sizes(self) -> list:
        return [len(leaf) for leaf in self.leaves]


def build_partition(cloud, depth: int) -> KdPartition:
    pts = as_points(cloud)
    m = pts.shape[0]
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if 2 ** depth > m:
        raise ValueError(f"depth {depth} needs at least {2 ** depth} points, cloud has {m}")

    leaves, axes, values = [], [], []

    def split(idx, level):
        if level == depth:
            leaves.append(np.sort(idx))
            return
        sub = pts[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        order = np.lexsort((idx, sub[:, axis]))
        idx = idx[order]
        half = (len(idx) + 1) // 2
        lo = pts[idx[half - 1], axis]
        hi = pts[idx[half], axis]
        axes.append(axis)
        values.append(float(0.5 * (lo + hi)))
        split(idx[:half], level + 1)
        split(idx[half:], level + 1)

    split(np.arange(m, dtype=np.int64), 0)
    return KdPartition(depth, tuple(leaves), tuple(axes), tuple(values))


def leaf_pair_iter(a: KdPartition, b: KdPartition):
    """Yield ``(source_leaf, target_leaf)`` index arrays paired by position."""
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} vs {b.depth}")
    for i, (la, lb) in enumerate(zip(a.leaves, b.leaves)):
        if len(la) != len(lb):
            raise ValueError(f"leaf {i} size mismatch: {len(la)} vs {len(lb)}")
    return list(zip(a.leaves, b.leaves))


def default_depth(m: int, leaf_size: int = 1024) -> int:
    """Depth giving leaves of about ``leaf_size`` points (0 when M <= leaf_size)."""
    return max(0, int(np.floor(np.log2(max(m, 1) / leaf_size))))
