"""
The folding autodecoder
=======================

A shared trunk maps a source point and a per-instance latent code to a
feature; each of K patch heads maps that feature (plus the point again) to an
output coordinate. Everything, including the source cloud and the latent
table, is trained with hand-written backpropagation and Adam.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from neuralqaad.autodecoder import (AdamState, NetConfig, adam_step, backward, forward,
                                    init_network, load_checkpoint, reconstruct, save_checkpoint)
from neuralqaad.pointcloud import gen_synthetic

target = gen_synthetic("two_scale_teeth", 1024, seed=0).points
cfg = NetConfig(m=1024, k=4, latent_dim=8, n_instances=1, seed=0, width=64)
net = init_network(cfg, target)
print("parameters:", {k: v.shape for k, v in net.params.items()})

# %%
# Fit a single instance with a plain aligned L2 loss on all points.
ids = np.arange(cfg.m)
adam = AdamState(lr=1e-3)
for step in range(301):
    out = forward(net, 0, ids)
    diff = out - target
    if step % 100 == 0:
        print(step, "mean squared error", (diff ** 2).sum(axis=1).mean())
    adam_step(net, adam, backward(net, 0, ids, 2 * diff / len(ids)))

# %%
# Checkpoints store parameters, optimizer moments and arbitrary metadata, and
# reload bit for bit.
path = Path(tempfile.mkdtemp()) / "fit.ckpt"
save_checkpoint(path, net, adam, {"note": "single instance fit"})
net2, adam2, meta, _ = load_checkpoint(path)
print(meta, "identical output:", np.array_equal(reconstruct(net2, 0), reconstruct(net, 0)))
