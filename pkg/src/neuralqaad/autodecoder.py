"""Folding autodecoder with a shared trunk and per-patch heads, in plain numpy.

Architecture (all affine layers 256 wide unless stated)::

    x = [q ; latent[i]]                      (3 + l)
    h = SELU(A4(SELU(A3(SELU(A2(SELU(A1 x)))))))   shared trunk
    z = SELU(H1_k([h ; q]))                  (256 + 3 -> 256), patch k
    p = H2_k(z)                              (256 -> 3), linear

Patch ``k`` owns the contiguous source rows ``[k*M/K, (k+1)*M/K)``. Heads are
evaluated together as one grouped (batched) matmul over equal-size patch groups.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .pointcloud import as_points

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def selu(x):
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))


def selu_grad(x):
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0)))


@dataclass(frozen=True)
class NetConfig:
    m: int
    k: int
    latent_dim: int
    n_instances: int
    seed: int = 0
    width: int = 256
    trunk_layers: int = 4
    latent_std: float = 0.01

    def __post_init__(self):
        if self.k < 1 or self.m % self.k:
            raise ValueError(f"M={self.m} is not divisible by K={self.k}")
        if self.n_instances < 1 or self.latent_dim < 1:
            raise ValueError("need at least one instance and a positive latent width")

    @property
    def patch_size(self) -> int:
        return self.m // self.k


class FoldingNet:
    """Parameters live in ``self.params`` (name -> float64 array)."""

    def __init__(self, config: NetConfig, params: dict):
        self.config = config
        self.params = params

    @property
    def trunk_names(self) -> list:
        return [f"trunk_W{i}" for i in range(self.config.trunk_layers)] + \
               [f"trunk_b{i}" for i in range(self.config.trunk_layers)]

    @property
    def head_names(self) -> list:
        return ["head_W0", "head_b0", "head_W1", "head_b1"]

    def patch_of(self, source_ids) -> np.ndarray:
        return np.asarray(source_ids) // self.config.patch_size

    def copy(self) -> "FoldingNet":
        return FoldingNet(self.config, {k: v.copy() for k, v in self.params.items()})


def init_network(config: NetConfig, init_cloud, latents=None) -> FoldingNet:
    """Fan-in scaled normal weights (SELU self-normalizing), zero biases.

    ``latents`` optionally supplies an externally computed (N, l) table;
    otherwise rows are drawn from N(0, latent_std^2).
    """
    src = as_points(init_cloud)
    if src.shape[0] != config.m:
        raise ValueError(f"init cloud has {src.shape[0]} points, config expects {config.m}")
    rng = np.random.default_rng(config.seed)
    w, l, k = config.width, config.latent_dim, config.k
    p = {}
    fan_in = 3 + l
    for i in range(config.trunk_layers):
        p[f"trunk_W{i}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, w))
        p[f"trunk_b{i}"] = np.zeros(w)
        fan_in = w
    p["head_W0"] = rng.normal(0.0, 1.0 / np.sqrt(w + 3), size=(k, w + 3, w))
    p["head_b0"] = np.zeros((k, w))
    p["head_W1"] = rng.normal(0.0, 1.0 / np.sqrt(w), size=(k, w, 3))
    p["head_b1"] = np.zeros((k, 3))
    p["source"] = np.array(src, dtype=np.float64, copy=True)
    if latents is None:
        p["latent"] = rng.normal(0.0, config.latent_std, size=(config.n_instances, l))
    else:
        latents = np.asarray(latents, dtype=np.float64)
        if latents.shape != (config.n_instances, l):
            raise ValueError(f"latents must have shape {(config.n_instances, l)}, got {latents.shape}")
        p["latent"] = latents.copy()
    return FoldingNet(config, p)


def _grouping(net: FoldingNet, source_ids):
    """Stable patch-major order of ``source_ids`` and the per-patch count."""
    ids = np.asarray(source_ids, dtype=np.int64)
    cfg = net.config
    if ids.ndim != 1 or len(ids) == 0:
        raise ValueError("source_ids must be a non-empty 1-d index list")
    if ids.min() < 0 or ids.max() >= cfg.m:
        raise IndexError(f"source ids out of range [0, {cfg.m})")
    counts = np.bincount(net.patch_of(ids), minlength=cfg.k)
    if np.any(counts != counts[0]):
        raise ValueError(f"source ids must hit every patch equally often, got counts {counts.tolist()}")
    order = np.argsort(net.patch_of(ids), kind="stable")
    return ids, order, int(counts[0])


def forward_batch(net: FoldingNet, instance_ids, source_ids, return_cache: bool = False):
    """Predict ``(B, S, 3)`` points for every instance in ``instance_ids``."""
    p = net.params
    cfg = net.config
    inst = np.atleast_1d(np.asarray(instance_ids, dtype=np.int64))
    if inst.min() < 0 or inst.max() >= cfg.n_instances:
        raise IndexError(f"instance id out of range [0, {cfg.n_instances})")
    ids, order, per = _grouping(net, source_ids)
    b, s, k = len(inst), len(ids), cfg.k

    q = p["source"][ids]                                  # (S, 3)
    lat = p["latent"][inst]                               # (B, l)
    w0 = p["trunk_W0"]
    pre = [(q @ w0[:3])[None, :, :] + (lat @ w0[3:])[:, None, :] + p["trunk_b0"]]
    acts = [selu(pre[0])]
    for i in range(1, cfg.trunk_layers):
        pre.append(acts[-1] @ p[f"trunk_W{i}"] + p[f"trunk_b{i}"])
        acts.append(selu(pre[-1]))

    # patch-major groups (K, B*c, F) so every head is one batched matmul
    h = acts[-1][:, order].reshape(b, k, per, cfg.width).transpose(1, 0, 2, 3).reshape(k, b * per, -1)
    qg = q[order].reshape(k, per, 3)
    hw = p["head_W0"]
    z_pre = (h @ hw[:, :cfg.width]).reshape(k, b, per, -1)
    z_pre += (qg @ hw[:, cfg.width:])[:, None]
    z_pre += p["head_b0"][:, None, None, :]
    z_pre = z_pre.reshape(k, b * per, -1)
    z = selu(z_pre)
    out_g = z @ p["head_W1"] + p["head_b1"][:, None, :]
    out_g = out_g.reshape(k, b, per, 3).transpose(1, 0, 2, 3)

    out = np.empty((b, s, 3))
    out[:, order] = out_g.reshape(b, s, 3)
    if not return_cache:
        return out
    cache = dict(inst=inst, ids=ids, order=order, per=per, q=q, qg=qg,
                 pre=pre, acts=acts, h=h, z_pre=z_pre, z=z)
    return out, cache


def backward_batch(net: FoldingNet, cache: dict, upstream) -> dict:
    """Exact gradients of ``sum(upstream * out)`` for every parameter tensor."""
    p = net.params
    cfg = net.config
    inst, ids, order, per = cache["inst"], cache["ids"], cache["order"], cache["per"]
    b, s, k, f = len(inst), len(ids), cfg.k, cfg.width
    g_out = np.asarray(upstream, dtype=np.float64)
    if g_out.shape != (b, s, 3):
        raise ValueError(f"upstream gradient shape {g_out.shape} != {(b, s, 3)}")
    grads = {}

    g_out_g = g_out[:, order].reshape(b, k, per, 3).transpose(1, 0, 2, 3).reshape(k, b * per, 3)
    z, h = cache["z"], cache["h"]
    grads["head_W1"] = z.transpose(0, 2, 1) @ g_out_g
    grads["head_b1"] = g_out_g.sum(axis=1)
    g_zpre = (g_out_g @ p["head_W1"].transpose(0, 2, 1)) * selu_grad(cache["z_pre"])
    g_zpre_q = g_zpre.reshape(k, b, per, f).sum(axis=1)   # (K, c, F)
    hw = p["head_W0"]
    grads["head_W0"] = np.concatenate([
        h.transpose(0, 2, 1) @ g_zpre,
        cache["qg"].transpose(0, 2, 1) @ g_zpre_q,
    ], axis=1)
    grads["head_b0"] = g_zpre.sum(axis=1)
    g_h_g = g_zpre @ hw[:, :f].transpose(0, 2, 1)            # (K, B*c, F)
    g_q_head_g = g_zpre_q @ hw[:, f:].transpose(0, 2, 1)     # (K, c, 3)

    g_act = np.empty((b, s, f))
    g_act[:, order] = g_h_g.reshape(k, b, per, f).transpose(1, 0, 2, 3).reshape(b, s, f)
    g_q = np.empty((s, 3))
    g_q[order] = g_q_head_g.reshape(s, 3)

    pre, acts = cache["pre"], cache["acts"]
    for i in range(cfg.trunk_layers - 1, 0, -1):
        g_pre = g_act * selu_grad(pre[i])
        flat_in = acts[i - 1].reshape(-1, f)
        flat_g = g_pre.reshape(-1, f)
        grads[f"trunk_W{i}"] = flat_in.T @ flat_g
        grads[f"trunk_b{i}"] = flat_g.sum(axis=0)
        g_act = g_pre @ p[f"trunk_W{i}"].T
    g_pre0 = g_act * selu_grad(pre[0])                     # (B, S, F)
    w0 = p["trunk_W0"]
    lat = p["latent"][inst]
    g_pre0_s = g_pre0.sum(axis=0)                         # (S, F)
    g_pre0_b = g_pre0.sum(axis=1)                         # (B, F)
    grads["trunk_W0"] = np.concatenate([cache["q"].T @ g_pre0_s, lat.T @ g_pre0_b], axis=0)
    grads["trunk_b0"] = g_pre0_s.sum(axis=0)
    g_q = g_q + g_pre0_s @ w0[:3].T

    g_src = np.zeros_like(p["source"])
    np.add.at(g_src, ids, g_q)
    grads["source"] = g_src
    g_lat = np.zeros_like(p["latent"])
    np.add.at(g_lat, inst, g_pre0_b @ w0[3:].T)
    grads["latent"] = g_lat
    return grads


def forward(net: FoldingNet, instance_id: int, source_ids) -> np.ndarray:
    return forward_batch(net, [instance_id], source_ids)[0]


def backward(net: FoldingNet, instance_id: int, source_ids, upstream_grads) -> dict:
    _, cache = forward_batch(net, [instance_id], source_ids, return_cache=True)
    return backward_batch(net, cache, np.asarray(upstream_grads)[None])


def forward_sequential(net: FoldingNet, instance_id: int, source_ids) -> np.ndarray:
    """Reference path: one point-set per patch, heads run one after another."""
    p = net.params
    cfg = net.config
    ids = np.asarray(source_ids, dtype=np.int64)
    out = np.empty((len(ids), 3))
    lat = p["latent"][instance_id]
    for patch in range(cfg.k):
        sel = np.flatnonzero(net.patch_of(ids) == patch)
        if len(sel) == 0:
            continue
        q = p["source"][ids[sel]]
        x = np.concatenate([q, np.broadcast_to(lat, (len(sel), cfg.latent_dim))], axis=1)
        for i in range(cfg.trunk_layers):
            x = selu(x @ p[f"trunk_W{i}"] + p[f"trunk_b{i}"])
        x = selu(np.concatenate([x, q], axis=1) @ p["head_W0"][patch] + p["head_b0"][patch])
        out[sel] = x @ p["head_W1"][patch] + p["head_b1"][patch]
    return out


def reconstruct(net: FoldingNet, instance_id: int, chunk: int | None = None) -> np.ndarray:
    """All M predicted points of one instance, in source row order."""
    cfg = net.config
    per = cfg.patch_size if chunk is None else max(1, chunk // cfg.k)
    out = np.empty((cfg.m, 3))
    starts = np.arange(cfg.k) * cfg.patch_size
    for lo in range(0, cfg.patch_size, per):
        hi = min(lo + per, cfg.patch_size)
        ids = (starts[:, None] + np.arange(lo, hi)[None, :]).reshape(-1)
        out[ids] = forward(net, instance_id, ids)
    return out


# --------------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyper(self) -> dict:
        return dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, step=self.step)


def adam_step(params: dict, state: AdamState, grads: dict, frozen=()) -> None:
    """In-place bias-corrected Adam update of every tensor named in ``grads``.

    ``params`` may be a FoldingNet or a plain dict of arrays.
    """
    if isinstance(params, FoldingNet):
        params = params.params
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(grads):
        if name in frozen:
            continue
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -------------------------------------------------------------------- checkpoint

MAGIC = b"NQAADCKP"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
    data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    nb = name.encode("utf-8")
    return (struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
            + struct.pack(f"<{arr.ndim}Q", *arr.shape) + data)


def save_checkpoint(path, net: FoldingNet, state: AdamState, train_meta: dict | None = None,
                    arrays: dict | None = None) -> None:
    """Write a checkpoint.

    Layout (little-endian)::

        8s  magic "NQAADCKP"     u32 version
        u64 header length        header: UTF-8 JSON {net, adam, meta}, sorted keys
        u32 tensor count
        per tensor: u16 name length, name, u8 dtype (0=f64, 1=i64), u8 ndim,
                    u64 * ndim shape, raw data

    Tensors are ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>`` and
    ``extra/<name>`` for caller arrays such as matching permutations.
    """
    header = json.dumps({"net": asdict(net.config), "adam": state.hyper(),
                         "meta": train_meta or {}}, sort_keys=True, separators=(",", ":"))
    tensors = [(f"param/{k}", v) for k, v in sorted(net.params.items())]
    tensors += [(f"adam_m/{k}", v) for k, v in sorted(state.m.items())]
    tensors += [(f"adam_v/{k}", v) for k, v in sorted(state.v.items())]
    tensors += [(f"extra/{k}", v) for k, v in sorted((arrays or {}).items())]
    hb = header.encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(hb)), hb,
              struct.pack("<I", len(tensors))]
    chunks += [_pack_tensor(n, a) for n, a in tensors]
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Returns ``(net, adam_state, train_meta, arrays)``."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", take(8))
    header = json.loads(take(hlen).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(take(size), dtype=dt).reshape(shape).copy()
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")

    cfg = NetConfig(**header["net"])
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    net = FoldingNet(cfg, dict(sorted(params.items())))
    adam = AdamState(**header["adam"])
    adam.m = {k[7:]: v for k, v in tensors.items() if k.startswith("adam_m/")}
    adam.v = {k[7:]: v for k, v in tensors.items() if k.startswith("adam_v/")}
    arrays = {k[6:]: v for k, v in tensors.items() if k.startswith("extra/")}
    return net, adam, header["meta"], arrays
