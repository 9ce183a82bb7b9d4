"""Point cloud data model, xyz/PLY I/O, patch-balanced sampling and synthetic shapes."""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class CloudFormatError(ValueError):
    """Raised when a point cloud file does not parse."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered (M, 3) float64 array of points. Row order is significant."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (M, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)

    def permuted(self, perm) -> "PointCloud":
        return PointCloud(self.points[np.asarray(perm)])


@dataclass
class Dataset:
    clouds: list
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.clouds:
            raise ValueError("a dataset needs at least one cloud")
        if not self.names:
            self.names = [f"instance_{i:04d}" for i in range(len(self.clouds))]
        m = len(self.clouds[0])
        for name, c in zip(self.names, self.clouds):
            if len(c) != m:
                raise ValueError(f"{name}: has {len(c)} points, expected {m} like the first cloud")

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def m(self) -> int:
        return len(self.clouds[0])


@dataclass(frozen=True)
class SampleSpec:
    sample_size: int
    per_patch_equal: bool = True
    seed: int = 0


def as_points(x) -> np.ndarray:
    """Accept a PointCloud or array-like and return a float64 (n, 3) array."""
    if isinstance(x, PointCloud):
        return x.points
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------- I/O

def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    ext = Path(path).suffix.lower()
    if ext == ".ply":
        return "ply"
    return "xyz_ascii"


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read a cloud from ``xyz_ascii`` or ``ply``; format is inferred from the suffix if omitted."""
    fmt = _infer_format(path, format)
    if fmt == "xyz_ascii":
        return PointCloud(_read_xyz(path))
    if fmt == "ply":
        return PointCloud(_read_ply(path))
    raise ValueError(f"unknown cloud format {fmt!r}")


def save_cloud(cloud, path, format: str | None = None) -> None:
    fmt = _infer_format(path, format)
    pts = as_points(cloud)
    if fmt == "xyz_ascii":
        # repr() gives the shortest decimal that round-trips exactly
        lines = [f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()]
        with open(path, "w", newline="\n") as fh:
            fh.writelines(lines)
    elif fmt == "ply":
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {pts.shape[0]}\n"
            "property double x\nproperty double y\nproperty double z\nend_header\n"
        )
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")


def _read_xyz(path) -> np.ndarray:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.rstrip("\r\n")
            if not s.strip() or s.lstrip().startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 3 coordinates, found {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise CloudFormatError(f"{path}:{lineno}: non-finite coordinate")
            rows.append(vals)
    if not rows:
        raise CloudFormatError(f"{path}: file contains no points")
    return np.array(rows, dtype=np.float64)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise CloudFormatError(f"{path}: byte 0: missing 'ply' magic")
    end = data.find(b"end_header")
    if end < 0:
        raise CloudFormatError(f"{path}: no end_header")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype or None for list)])
    for raw in header[1:]:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise CloudFormatError(f"{path}: property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], None))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}: unknown property type {tok[1]!r}")
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise CloudFormatError(f"{path}: unsupported PLY format {fmt!r}")

    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise CloudFormatError(f"{path}: no vertex element")
    for e in elements:
        if e[0] != "vertex":
            warnings.warn(f"{path}: skipping PLY element {e[0]!r}")

    if fmt == "ascii":
        lines = data[body_start:].decode("ascii").splitlines()
        pos = 0
        for name, count, props in elements:
            if name == "vertex":
                if any(dt is None for _, dt in props):
                    raise CloudFormatError(f"{path}: list properties on vertex are not supported")
                pnames = [p for p, _ in props]
                try:
                    idx = [pnames.index(k) for k in "xyz"]
                except ValueError:
                    raise CloudFormatError(f"{path}: vertex lacks x/y/z") from None
                out = np.empty((count, 3))
                for r in range(count):
                    if pos + r >= len(lines):
                        raise CloudFormatError(f"{path}: truncated vertex data at vertex {r}")
                    tok = lines[pos + r].split()
                    try:
                        out[r] = [float(tok[i]) for i in idx]
                    except (ValueError, IndexError):
                        raise CloudFormatError(
                            f"{path}: body line {pos + r + 1}: malformed vertex") from None
                pts = out
                break
            pos += count
    else:
        offset = body_start
        for name, count, props in elements:
            if any(dt is None for _, dt in props):
                raise CloudFormatError(
                    f"{path}: byte {offset}: list property in element {name!r} before vertex data")
            dtype = np.dtype([(p, "<" + dt) for p, dt in props])
            if name == "vertex":
                nbytes = dtype.itemsize * count
                if offset + nbytes > len(data):
                    raise CloudFormatError(f"{path}: byte {offset}: truncated vertex data")
                rec = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
                try:
                    pts = np.stack([rec[k].astype(np.float64) for k in "xyz"], axis=1)
                except ValueError:
                    raise CloudFormatError(f"{path}: vertex lacks x/y/z") from None
                break
            offset += dtype.itemsize * count
    if pts.shape[0] == 0:
        raise CloudFormatError(f"{path}: file contains no points")
    if not np.all(np.isfinite(pts)):
        bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
        raise CloudFormatError(f"{path}: vertex {bad}: non-finite coordinate")
    return pts


def load_dataset(directory, normalize: bool = False) -> Dataset:
    """Load every ``.xyz``/``.ply`` file in ``directory`` (sorted by name)."""
    files = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() in (".xyz", ".ply") and p.is_file())
    if not files:
        raise FileNotFoundError(f"{directory}: no .xyz or .ply files")
    clouds, names = [], []
    for f in files:
        c = load_cloud(f)
        if clouds and len(c) != len(clouds[0]):
            raise ValueError(f"{f.name}: has {len(c)} points but {files[0].name} has {len(clouds[0])}")
        clouds.append(normalize_unit_sphere(c) if normalize else c)
        names.append(f.stem)
    return Dataset(clouds, names)


def normalize_unit_sphere(cloud) -> PointCloud:
    pts = as_points(cloud)
    centered = pts - pts.mean(axis=0)
    r = np.linalg.norm(centered, axis=1).max()
    return PointCloud(centered / r if r > 0 else centered)


# ---------------------------------------------------------------------- sampling

def patch_bounds(m: int, patches) -> np.ndarray:
    """Boundaries ``[0, b1, ..., m]`` of contiguous patches; ``patches`` is K or explicit bounds."""
    if np.isscalar(patches):
        k = int(patches)
        if k < 1 or m % k:
            raise ValueError(f"M={m} is not divisible by K={k}")
        return np.arange(k + 1) * (m // k)
    b = np.asarray(patches, dtype=np.int64)
    if b[0] != 0 or b[-1] != m or np.any(np.diff(b) <= 0):
        raise ValueError("patch bounds must increase strictly from 0 to M")
    return b


def uniform_sample_indices(m: int, spec: SampleSpec, patch_layout=1,
                           rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``spec.sample_size`` distinct indices in ``[0, m)``.

    With ``per_patch_equal`` every patch contributes exactly ``sample_size / K``
    indices; the result is grouped patch by patch. ``rng`` overrides the seed.
    """
    if spec.sample_size > m:
        raise ValueError(f"sample_size {spec.sample_size} exceeds cloud size {m}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if not spec.per_patch_equal:
        return np.sort(rng.choice(m, size=spec.sample_size, replace=False))
    bounds = patch_bounds(m, patch_layout)
    k = len(bounds) - 1
    if spec.sample_size % k:
        raise ValueError(f"sample_size {spec.sample_size} is not divisible by K={k}")
    per = spec.sample_size // k
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if per > hi - lo:
            raise ValueError(f"patch [{lo}, {hi}) is smaller than {per} samples")
        out.append(lo + np.sort(rng.choice(hi - lo, size=per, replace=False)))
    return np.concatenate(out)


# --------------------------------------------------------------------- synthetic

def grid_cube(m: int) -> np.ndarray:
    """First ``m`` lattice points (row-major) of the smallest cube holding ``m`` points."""
    side = round(m ** (1 / 3))
    if side ** 3 < m:
        side += 1
    while (side - 1) ** 3 >= m:
        side -= 1
    ax = np.arange(side, dtype=np.float64)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[:m]


def _sphere_dirs(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def two_scale_teeth(m: int, seed: int = 0, scale: float = 1.0,
                    protrusion_fraction: float = 0.4, n_teeth: int = 16):
    """Smooth ellipsoid shell with a row of small, densely sampled cylinders.

    Returns ``(points, is_protrusion)``. The cylinders (teeth) cover a tiny
    area relative to the shell, so their sampling is much denser.
    """
    rng = np.random.default_rng(seed)
    n_fine = int(m * protrusion_fraction)
    n_base = m - n_fine
    radii = np.array([1.0, 0.8, 0.7]) * (1 + 0.05 * rng.uniform(-1, 1, size=3))
    base = _sphere_dirs(rng, n_base) * radii

    # teeth on an arc below the front of the shell, pointing down
    phase = rng.uniform(-0.1, 0.1)
    angles = np.linspace(-0.9, 0.9, n_teeth) + phase
    roots = np.stack([radii[0] * 0.55 * np.sin(angles),
                      radii[1] * 0.55 * np.cos(angles),
                      np.full(n_teeth, -radii[2] * 0.8)], axis=1)
    tooth = rng.integers(0, n_teeth, size=n_fine)
    theta = rng.uniform(0, 2 * np.pi, size=n_fine)
    h = rng.uniform(0, 0.15, size=n_fine)
    r = 0.03
    fine = roots[tooth] + np.stack([r * np.cos(theta), r * np.sin(theta), -h], axis=1)

    pts = np.concatenate([base, fine]) * scale
    mask = np.zeros(m, dtype=bool)
    mask[n_base:] = True
    return pts, mask


def gaussian_blobs(m: int, seed: int = 0, scale: float = 1.0, n_blobs: int = 8) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = _sphere_dirs(rng, n_blobs) * 0.8
    sizes = np.full(n_blobs, m // n_blobs)
    sizes[: m % n_blobs] += 1
    parts = [c + 0.12 * rng.normal(size=(s, 3)) for c, s in zip(centers, sizes)]
    return np.concatenate(parts) * scale


def gen_synthetic(kind: str, m: int, seed: int = 0, scale: float = 1.0) -> PointCloud:
    """Synthetic test shapes: ``grid_cube``, ``two_scale_teeth`` or ``gaussian_blobs``.

    ``grid_cube`` ignores ``seed`` and ``scale``; for ``m`` that is not a perfect
    cube it keeps the first ``m`` lattice points of the enclosing cube.
    """
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    if kind == "grid_cube":
        return PointCloud(grid_cube(m))
    if kind == "two_scale_teeth":
        if m < 2:
            raise ValueError("two_scale_teeth needs m >= 2")
        return PointCloud(two_scale_teeth(m, seed, scale)[0])
    if kind == "gaussian_blobs":
        return PointCloud(gaussian_blobs(m, seed, scale))
    raise ValueError(f"unknown synthetic kind {kind!r}")


def synthetic_dataset(kind: str, n: int, m: int, seed: int = 0, scale: float = 1.0) -> Dataset:
    """``n`` instances of one synthetic kind; instance ``i`` uses seed ``seed + i``."""
    clouds = [gen_synthetic(kind, m, seed + i, scale) for i in range(n)]
    return Dataset(clouds, [f"{kind}_{i:03d}" for i in range(n)])


def save_dataset(ds: Dataset, directory, format: str = "xyz_ascii") -> list:
    os.makedirs(directory, exist_ok=True)
    ext = ".ply" if format == "ply" else ".xyz"
    paths = []
    for name, c in zip(ds.names, ds.clouds):
        p = Path(directory) / f"{name}{ext}"
        save_cloud(c, p, format)
        paths.append(p)
    return paths
