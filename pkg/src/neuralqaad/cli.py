"""Command-line entry point: ``neuralqaad {metric,train,reconstruct,eval,study,gen}``.

Exit codes: 0 success, 1 data or runtime error, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .autodecoder import NetConfig, init_network, load_checkpoint, reconstruct
from .experiments import ChamferStudyConfig, chamfer_study, evaluate_emkd, write_study_csv
from .metrics import metric_report
from .pointcloud import (PointCloud, gen_synthetic, load_cloud, load_dataset, save_cloud,
                         synthetic_dataset)
from .trainer import LOG_HEADER, TrainConfig, TrainState, substream, train

log = logging.getLogger("neuralqaad")


class ConfigError(Exception):
    """Bad config file or option; maps to exit code 2."""


# ------------------------------------------------------------------------ config

_SCHEMA = {
    "data": {"dir": str, "synthetic": str, "n": int, "m": int, "seed": int,
             "scale": float, "normalize": bool},
    "model": {"k": int, "latent_dim": int, "width": int, "seed": int, "latents": str,
              "init_instance": int},
    "train": {f.name: f.type for f in fields(TrainConfig)
              if f.name not in ("checkpoint_dir", "log_path", "threads")},
    "output": {"dir": str, "log_timing": bool},
    "study": {"target": str, "synthetic": str, "m": int, "scale": float, "objective": str,
              "fractions": str, "steps": int, "lr": float, "k": int, "seed": int,
              "out": str},
}
_TYPES = {"int": int, "float": float, "bool": bool, "str": str, "str | None": str}


def _coerce(key_path: str, raw: str, typ):
    if isinstance(typ, str):
        typ = _TYPES[typ]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{key_path}: cannot parse {raw!r} as {typ.__name__}") from None


def read_config(path) -> dict:
    """Parse an INI config into ``{section: {key: typed value}}``; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{section}: unknown section")
        out[section] = {}
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            out[section][key] = _coerce(f"{section}.{key}", raw, _SCHEMA[section][key])
    return out


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config: dict, inputs: list, seeds: dict) -> None:
    manifest = {
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _digest(p) for p in inputs},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------- commands

def _dataset_from_config(data: dict, seed: int):
    if "dir" in data:
        ds = load_dataset(data["dir"], normalize=data.get("normalize", False))
        inputs = sorted(p for p in Path(data["dir"]).iterdir()
                        if p.suffix.lower() in (".xyz", ".ply"))
        return ds, inputs
    if "synthetic" in data:
        for key in ("n", "m"):
            if key not in data:
                raise ConfigError(f"data.{key}: required for synthetic data")
        ds = synthetic_dataset(data["synthetic"], data["n"], data["m"],
                               seed=data.get("seed", seed), scale=data.get("scale", 1.0))
        return ds, []
    raise ConfigError("data: need either 'dir' or 'synthetic'")


def cmd_metric(args) -> int:
    p = load_cloud(args.a)
    q = load_cloud(args.b)
    rep = metric_report(p, q, args.kind, depth=args.depth, epsilon=args.epsilon,
                        max_iterations=args.iterations, k=args.k, threads=args.threads)
    print(rep.csv_row())
    return 0


def cmd_train(args) -> int:
    cfg_all = read_config(args.config)
    seed = args.seed if args.seed is not None else cfg_all.get("train", {}).get("seed", 0)
    tcfg_d = dict(cfg_all.get("train", {}))
    tcfg_d["seed"] = seed
    out_dir = Path(cfg_all.get("output", {}).get("dir", "run"))
    tcfg = TrainConfig(**tcfg_d, threads=args.threads,
                       checkpoint_dir=str(out_dir / "checkpoints"),
                       log_path=str(out_dir / "train_log.csv"))

    ds, inputs = _dataset_from_config(cfg_all.get("data", {}), seed)
    model = cfg_all.get("model", {})
    k = model.get("k", 16)
    if tcfg.sample_size % k:
        raise ConfigError(f"train.sample_size={tcfg.sample_size} is not divisible by model.k={k}")
    try:
        tcfg.validate(k, len(ds), ds.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    write_manifest(out_dir / "manifest.json", {s: dict(v) for s, v in cfg_all.items()},
                   inputs, {"train": seed, "model": model.get("seed", seed)})

    if args.resume:
        state = TrainState.load(args.resume, ds)
        _truncate_log(tcfg.log_path, state.epoch)
    else:
        latents = np.loadtxt(model["latents"], ndmin=2) if "latents" in model else None
        init_idx = model.get("init_instance")
        if init_idx is None:
            init_idx = int(substream(seed, "init_instance").integers(len(ds)))
        ncfg = NetConfig(m=ds.m, k=k, latent_dim=model.get("latent_dim", 64),
                         n_instances=len(ds), seed=model.get("seed", seed),
                         width=model.get("width", 256))
        net = init_network(ncfg, ds.clouds[init_idx], latents)
        state = TrainState.fresh(net, ds, tcfg)
    report = train(ds, None, tcfg, state=state)
    if not cfg_all.get("output", {}).get("log_timing", True):
        _strip_timing(tcfg.log_path)
    state.save(out_dir / "final.ckpt", tcfg)
    log.info("trained %d epochs; final loss %s", len(report.epoch_loss),
             report.epoch_loss[-1] if report.epoch_loss else "n/a")
    return 0


def _truncate_log(path, epoch: int) -> None:
    """Drop log rows at or after ``epoch`` so a resumed run appends cleanly."""
    if not path or not os.path.exists(path):
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) < epoch]
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(keep)


def _strip_timing(path) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    idx = LOG_HEADER.index("elapsed_ms")
    for r in rows[1:]:
        r[idx] = ""
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def cmd_reconstruct(args) -> int:
    net, _, _, _ = load_checkpoint(args.ckpt)
    if not 0 <= args.instance < net.config.n_instances:
        raise IndexError(f"instance {args.instance} out of range [0, {net.config.n_instances})")
    _ensure_parent(args.out)
    save_cloud(PointCloud(reconstruct(net, args.instance)), args.out, args.format)
    return 0


def cmd_eval(args) -> int:
    net, _, _, _ = load_checkpoint(args.ckpt)
    ds = load_dataset(args.dataset, normalize=args.normalize)
    per, mean = evaluate_emkd(ds, net, args.depth, args.epsilon, args.iterations, args.threads)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["instance", "name", "emkd"])
    for i, (name, v) in enumerate(zip(ds.names, per)):
        w.writerow([i, name, repr(v)])
    w.writerow(["mean", "", repr(mean)])
    return 0


def cmd_study(args) -> int:
    cfg_all = read_config(args.config)
    st = cfg_all.get("study", {})
    seed = args.seed if args.seed is not None else st.get("seed", 0)
    if "target" in st:
        target = load_cloud(st["target"])
        inputs = [st["target"]]
    elif "synthetic" in st:
        target = gen_synthetic(st["synthetic"], st.get("m", 8192), seed, st.get("scale", 10.0))
        inputs = []
    else:
        raise ConfigError("study: need either 'target' or 'synthetic'")
    fractions = (1.0, 0.1, 0.01)
    if "fractions" in st:
        try:
            fractions = tuple(float(f) for f in st["fractions"].split(","))
        except ValueError:
            raise ConfigError(f"study.fractions: cannot parse {st['fractions']!r}") from None
    out = Path(st.get("out", "study.csv"))
    write_manifest(out.with_suffix(".manifest.json"), {"study": st}, inputs, {"study": seed})
    objectives = [o.strip() for o in st.get("objective", "aug_chamfer_direct").split(",")]
    curves = []
    for obj in objectives:
        try:
            cfg = ChamferStudyConfig(target, obj, fractions, st.get("steps", 2000),
                                     st.get("lr", 0.05), st.get("k", 5), seed)
        except ValueError as exc:
            raise ConfigError(f"study: {exc}") from None
        curves += chamfer_study(cfg)
    write_study_csv(out, curves)
    return 0


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else 0
    _ensure_parent(args.out)
    save_cloud(gen_synthetic(args.kind, args.m, seed, args.scale), args.out, args.format)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--format", choices=["xyz_ascii", "ply"], default=None,
                        help="output cloud format (default: from file suffix)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="neuralqaad", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metric", parents=[common], help="distance between two clouds as one CSV row")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--kind", default="emkd",
                   choices=["chamfer", "aug_chamfer", "emd_exact_mean", "emkd",
                            "normalized_log_aug_chamfer"])
    p.add_argument("--depth", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("train", parents=[common], help="train from an INI config")
    p.add_argument("config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", parents=[common], help="write one decoded instance")
    p.add_argument("ckpt")
    p.add_argument("instance", type=int)
    p.add_argument("out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", parents=[common], help="per-instance and mean EM-kD")
    p.add_argument("ckpt")
    p.add_argument("dataset")
    p.add_argument("--depth", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("study", parents=[common], help="cube-fitting Chamfer study from a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic cloud")
    p.add_argument("kind", choices=["grid_cube", "two_scale_teeth", "gaussian_blobs"])
    p.add_argument("m", type=int)
    p.add_argument("out")
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"neuralqaad: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, IndexError, KeyError, FloatingPointError) as exc:
        print(f"neuralqaad: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
