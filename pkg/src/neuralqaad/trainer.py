"""Training loop: greedy initial matching, sampled folding steps, in-training reassignment."""
from __future__ import annotations

import csv
import logging
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .autodecoder import (AdamState, FoldingNet, adam_step, backward_batch, forward_batch,
                          forward_sequential, load_checkpoint, save_checkpoint)
from .matching import MatchingState, qaad_greedy, qaad_reassignment
from .pointcloud import Dataset, SampleSpec, as_points, uniform_sample_indices

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "batch", "loss", "swaps", "elapsed_ms"]


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator derived from the run seed and a stream name."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 16
    sample_size: int = 2048
    depth: int = 0
    epsilon: float = 1.0
    max_iterations: int = 100
    loss_kind: str = "aligned_l2"
    reassignment: bool = True
    greedy_init: bool = True
    lr: float = 1e-3
    seed: int = 0
    threads: int = 1
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def validate(self, k: int, n: int, m: int) -> None:
        if self.loss_kind not in ("aligned_l2", "aug_chamfer_sample"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        if self.sample_size % k:
            raise ValueError(f"sample_size={self.sample_size} is not divisible by K={k}")
        if self.sample_size > m:
            raise ValueError(f"sample_size={self.sample_size} exceeds M={m}")
        if not 1 <= self.batch_size <= n:
            raise ValueError(f"batch_size={self.batch_size} must lie in [1, N={n}]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    epoch_swaps: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)
    final_emkd: list | None = None


# ------------------------------------------------------------------------ losses

def loss_aligned(pred, target_rows):
    """Mean Euclidean distance between prediction ``i`` and target row ``i``."""
    pred = np.asarray(pred, dtype=np.float64)
    tgt = np.asarray(target_rows, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise ValueError(f"count mismatch: {pred.shape} vs {tgt.shape}")
    diff = pred - tgt
    d = np.linalg.norm(diff, axis=1)
    n = len(d)
    safe = np.where(d > 0, d, 1.0)
    grad = np.where((d > 0)[:, None], diff / safe[:, None], 0.0) / n
    return float(d.mean()), grad


def loss_aug_chamfer_sample(pred, target_sample):
    """Augmented Chamfer (max of directed sums) with a subgradient through the realized branch.

    On a tie between the two directed sums the pred->target branch is used.
    """
    pred = as_points(pred)
    tgt = as_points(target_sample)
    if len(pred) == 0 or len(tgt) == 0:
        raise ValueError("augmented Chamfer needs non-empty inputs")
    d_pt, i_pt = cKDTree(tgt).query(pred, k=1)
    d_tp, i_tp = cKDTree(pred).query(tgt, k=1)
    fwd, bwd = d_pt.sum(), d_tp.sum()
    grad = np.zeros_like(pred)
    if fwd >= bwd:
        diff = pred - tgt[i_pt]
        ok = d_pt > 0
        grad[ok] = diff[ok] / d_pt[ok, None]
        return float(fwd), grad
    diff = pred[i_tp] - tgt
    ok = d_tp > 0
    np.add.at(grad, i_tp[ok], diff[ok] / d_tp[ok, None])
    return float(bwd), grad


_LOSSES = {"aligned_l2": loss_aligned, "aug_chamfer_sample": loss_aug_chamfer_sample}


# ------------------------------------------------------------------------- state

@dataclass
class TrainState:
    net: FoldingNet
    adam: AdamState
    matchings: list
    rng: np.random.Generator
    epoch: int = 0
    greedy_done: bool = False

    @classmethod
    def fresh(cls, net: FoldingNet, dataset: Dataset, cfg: TrainConfig) -> "TrainState":
        return cls(net=net, adam=AdamState(lr=cfg.lr),
                   matchings=[MatchingState(c.points) for c in dataset.clouds],
                   rng=substream(cfg.seed, "train"))

    def save(self, path, cfg: TrainConfig) -> None:
        # output locations are left out so identical runs in different
        # directories produce identical checkpoints
        run_cfg = {k: v for k, v in asdict(cfg).items() if k not in ("checkpoint_dir", "log_path")}
        meta = {"epoch": self.epoch, "greedy_done": self.greedy_done,
                "rng": self.rng.bit_generator.state, "train_config": run_cfg}
        arrays = {f"perm_{i:05d}": ms.perm for i, ms in enumerate(self.matchings)}
        save_checkpoint(path, self.net, self.adam, meta, arrays)

    @classmethod
    def load(cls, path, dataset: Dataset) -> "TrainState":
        net, adam, meta, arrays = load_checkpoint(path)
        if net.config.m != dataset.m or net.config.n_instances != len(dataset):
            raise ValueError(f"{path}: checkpoint shape does not match the dataset")
        matchings = [MatchingState.from_original(c.points, arrays[f"perm_{i:05d}"])
                     for i, c in enumerate(dataset.clouds)]
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        return cls(net, adam, matchings, rng, meta["epoch"], meta["greedy_done"])


def _instance_predictor(net: FoldingNet, instance: int):
    return lambda ids: forward_sequential(net, instance, ids)


def greedy_initialize(state: TrainState, cfg: TrainConfig) -> None:
    source = state.net.params["source"]
    for i, ms in enumerate(state.matchings):
        qaad_greedy(source, ms, cfg.depth, cfg.epsilon, cfg.max_iterations,
                    seed=substream(cfg.seed, f"greedy/{i}"), threads=cfg.threads)
    state.greedy_done = True


def train_step(state: TrainState, batch, cfg: TrainConfig):
    """One sampled optimization step over ``batch`` instance ids. Returns ``(loss, swaps)``."""
    net = state.net
    m, k = net.config.m, net.config.k
    sids = uniform_sample_indices(m, SampleSpec(cfg.sample_size), k, rng=state.rng)
    pred, cache = forward_batch(net, batch, sids, return_cache=True)

    swaps = 0
    if cfg.reassignment:
        tids = np.sort(state.rng.choice(m, size=cfg.sample_size, replace=False))

        def reassign(b):
            inst = int(batch[b])
            return qaad_reassignment(sids, tids, pred[b], _instance_predictor(net, inst),
                                     state.matchings[inst])

        if cfg.threads > 1 and len(batch) > 1:
            with ThreadPoolExecutor(cfg.threads) as ex:
                counts = list(ex.map(reassign, range(len(batch))))
        else:
            counts = [reassign(b) for b in range(len(batch))]
        swaps = int(sum(counts))

    loss_fn = _LOSSES[cfg.loss_kind]
    upstream = np.empty_like(pred)
    total = 0.0
    for b, inst in enumerate(batch):
        value, g = loss_fn(pred[b], state.matchings[int(inst)].rows[sids])
        total += value
        upstream[b] = g / len(batch)
    grads = backward_batch(net, cache, upstream)
    adam_step(net, state.adam, grads)
    return total / len(batch), swaps


def _open_log(path, resume: bool):
    if path is None:
        return None, None
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    exists = os.path.exists(path) and resume
    fh = open(path, "a" if exists else "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    if not exists:
        writer.writerow(LOG_HEADER)
    return fh, writer


def train(dataset: Dataset, net: FoldingNet | None, cfg: TrainConfig,
          state: TrainState | None = None) -> TrainReport:
    """Run ``cfg.epochs`` epochs; pass ``state`` (e.g. from a checkpoint) to resume."""
    if state is None:
        if net is None:
            raise ValueError("need a network or a resumable state")
        state = TrainState.fresh(net, dataset, cfg)
    net = state.net
    if dataset.m != net.config.m:
        raise ValueError(f"dataset M={dataset.m} does not match network M={net.config.m}")
    cfg.validate(net.config.k, len(dataset), dataset.m)
    state.adam.lr = cfg.lr
    report = TrainReport()
    if state.epoch >= cfg.epochs:
        return report

    if cfg.greedy_init and not state.greedy_done:
        t0 = time.perf_counter()
        greedy_initialize(state, cfg)
        log.info("greedy initial matching for %d instances took %.1fs",
                 len(dataset), time.perf_counter() - t0)

    fh, writer = _open_log(cfg.log_path, resume=state.epoch > 0)
    n = len(dataset)
    try:
        while state.epoch < cfg.epochs:
            epoch = state.epoch
            t0 = time.perf_counter()
            order = state.rng.permutation(n)
            losses, swaps = [], 0
            for j, lo in enumerate(range(0, n, cfg.batch_size)):
                batch = order[lo:lo + cfg.batch_size]
                ts = time.perf_counter()
                loss, s = train_step(state, batch, cfg)
                elapsed = int(round(1000 * (time.perf_counter() - ts)))
                row = [epoch, j, repr(loss), s, elapsed]
                report.log_rows.append(row)
                if writer:
                    writer.writerow(row)
                losses.append(loss)
                swaps += s
            state.epoch += 1
            report.epoch_loss.append(float(np.mean(losses)))
            report.epoch_swaps.append(swaps)
            report.epoch_seconds.append(time.perf_counter() - t0)
            log.debug("epoch %d loss %.6f swaps %d", epoch, report.epoch_loss[-1], swaps)
            if cfg.checkpoint_every and cfg.checkpoint_dir and state.epoch % cfg.checkpoint_every == 0:
                os.makedirs(cfg.checkpoint_dir, exist_ok=True)
                state.save(Path(cfg.checkpoint_dir) / f"epoch_{state.epoch:05d}.ckpt", cfg)
                if fh:
                    fh.flush()
    finally:
        if fh:
            fh.close()
    return report
