"""Desk-scale studies: fitting a unit-spaced cube to a target under Chamfer or matched losses,
and EM-kD evaluation of trained decoders."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .autodecoder import AdamState, FoldingNet, adam_step, reconstruct
from .metrics import emkd, sampling_normalizer
from .pointcloud import Dataset, as_points, grid_cube
from .trainer import loss_aug_chamfer_sample, substream

OBJECTIVES = ("aug_chamfer_direct", "chamfer_proxy", "mse_random_perfect")


@dataclass
class ChamferStudyConfig:
    target: object
    objective: str = "aug_chamfer_direct"
    fractions: tuple = (1.0, 0.1, 0.01)
    steps: int = 2000
    lr: float = 0.05
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if not all(0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")


@dataclass
class StudyCurve:
    objective: str
    fraction: float
    values: np.ndarray                 # normalized log aug. Chamfer, steps + 1 entries
    final_mse: float | None = None     # aligned MSE, mse_random_perfect only
    extra: dict = field(default_factory=dict)


def _chamfer_grad(x, t):
    """Chamfer (sum of both directed sums) and its gradient w.r.t. ``x``."""
    d_xt, i_xt = cKDTree(t).query(x, k=1)
    d_tx, i_tx = cKDTree(x).query(t, k=1)
    g = np.zeros_like(x)
    ok = d_xt > 0
    g[ok] = (x - t[i_xt])[ok] / d_xt[ok, None]
    ok = d_tx > 0
    np.add.at(g, i_tx[ok], (x[i_tx] - t)[ok] / d_tx[ok, None])
    return d_xt.sum() + d_tx.sum(), g, max(d_xt.sum(), d_tx.sum())


def _aug_value(x, t):
    return max(cKDTree(t).query(x, k=1)[0].sum(), cKDTree(x).query(t, k=1)[0].sum())


def fit_offsets(source, target, objective: str, steps: int, lr: float, k: int = 5,
                rng: np.random.Generator | None = None) -> StudyCurve:
    """Optimize a zero-initialized offset added to ``source`` towards ``target``."""
    src = as_points(source)
    tgt = as_points(target)
    norm = sampling_normalizer(tgt, k)
    offset = {"offset": np.zeros_like(src)}
    adam = AdamState(lr=lr)
    if objective == "mse_random_perfect":
        if len(src) != len(tgt):
            raise ValueError("a perfect matching needs equal sizes")
        rng = rng or np.random.default_rng(0)
        matched = tgt[rng.permutation(len(tgt))]

    def log_norm(d_a):
        return -math.inf if d_a == 0 else math.log(d_a / norm)

    values = np.empty(steps + 1)
    for step in range(steps + 1):
        x = src + offset["offset"]
        if objective == "aug_chamfer_direct":
            d_a, g = loss_aug_chamfer_sample(x, tgt)
        elif objective == "chamfer_proxy":
            _, g, d_a = _chamfer_grad(x, tgt)
        else:
            diff = x - matched
            g = 2.0 * diff / len(x)
            d_a = _aug_value(x, tgt)
        values[step] = log_norm(d_a)
        if step < steps:
            adam_step(offset, adam, {"offset": g})
    curve = StudyCurve(objective, 1.0, values)
    if objective == "mse_random_perfect":
        x = src + offset["offset"]
        curve.final_mse = float(((x - matched) ** 2).sum(axis=1).mean())
    return curve


def study_source(target) -> np.ndarray:
    """Unit-spaced lattice with one point per target point, centered on the target."""
    tgt = as_points(target)
    g = grid_cube(len(tgt))
    return g - g.mean(axis=0) + tgt.mean(axis=0)


def chamfer_study(cfg: ChamferStudyConfig) -> list:
    """One curve per sampling fraction; subsets are uniform without replacement."""
    tgt = as_points(cfg.target)
    curves = []
    for fraction in cfg.fractions:
        rng = substream(cfg.seed, f"study/{fraction!r}")
        n = max(cfg.k + 1, int(round(fraction * len(tgt))))
        sub = tgt[np.sort(rng.choice(len(tgt), size=n, replace=False))] if n < len(tgt) else tgt
        curve = fit_offsets(study_source(sub), sub, cfg.objective, cfg.steps, cfg.lr, cfg.k, rng)
        curve.fraction = float(fraction)
        curves.append(curve)
    return curves


def write_study_csv(path, curves) -> None:
    """Columns ``step, objective, fraction, value``; ``-inf`` marks identical clouds."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "objective", "fraction", "value"])
        for c in curves:
            for step, v in enumerate(c.values):
                w.writerow([step, c.objective, repr(c.fraction), repr(float(v))])


def evaluate_emkd(dataset: Dataset, net: FoldingNet, depth: int = 0, epsilon: float = 1.0,
                  max_iterations: int = 100, threads: int = 1):
    """EM-kD of every full-resolution reconstruction against its ground truth.

    Returns ``(per_instance, mean)``.
    """
    per = []
    for i, cloud in enumerate(dataset.clouds):
        rec = reconstruct(net, i)
        per.append(emkd(rec, cloud, depth, epsilon, max_iterations, threads).value)
    return per, float(np.mean(per))
