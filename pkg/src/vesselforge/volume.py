"""Voxel grids, NRRD I/O, preprocessing and differential fields.

Arrays are stored as ``data[i, j, k]`` with ``i`` along x.  Voxel ``(i, j, k)``
sits at ``origin + spacing * (i, j, k)`` in millimetres.  Flattened payloads
are x-fastest, i.e. Fortran order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class VolumeError(ValueError):
    pass


def _as_triple(values, name, positive=False):
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise VolumeError(f"{name} must have 3 entries, got {len(out)}")
    if not all(np.isfinite(out)):
        raise VolumeError(f"{name} must be finite")
    if positive and min(out) <= 0:
        raise VolumeError(f"{name} must be strictly positive, got {out}")
    return out


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise VolumeError(f"expected a 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise VolumeError("grid values must be finite")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def dims(self):
        return self.data.shape

    def flat(self):
        """Payload in x-fastest order."""
        return self.data.ravel(order="F")

    def with_data(self, data):
        return VoxelGrid(data, self.spacing, self.origin)

    def same_geometry(self, other) -> bool:
        return (
            tuple(self.dims) == tuple(other.dims)
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def coordinates(self):
        """Physical voxel-centre coordinates, shape ``dims + (3,)``."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True, eq=False)
class VectorGrid:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[-1] != 3:
            raise VolumeError(f"expected shape (nx, ny, nz, 3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise VolumeError("vector components must be finite")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def dims(self):
        return self.data.shape[:3]


@dataclass(frozen=True)
class PreprocessConfig:
    clip_lo: float = 0.0
    clip_hi: float = 500.0
    resample_factor: float = 1.5
    crop_dims: tuple = (64, 64, 64)
    flip_axes: tuple = (True, True, True)
    rotate90: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.clip_lo < self.clip_hi:
            raise VolumeError("clip_lo must be below clip_hi")
        if self.resample_factor <= 0:
            raise VolumeError("resample_factor must be positive")
        if len(self.crop_dims) != 3 or min(self.crop_dims) < 1:
            raise VolumeError(f"bad crop_dims {self.crop_dims}")


# ---------------------------------------------------------------------------
# NRRD subset

_NRRD_MAGIC = "NRRD0004"
_REQUIRED = ("type", "dimension", "sizes", "space directions", "space origin", "encoding", "endian")


def _fmt(x):
    return repr(float(x))


def save_volume(grid: VoxelGrid, path) -> None:
    sx, sy, sz = grid.spacing
    header = "\n".join(
        [
            _NRRD_MAGIC,
            "type: double",
            "dimension: 3",
            "sizes: {} {} {}".format(*grid.dims),
            f"space directions: ({_fmt(sx)},0,0) (0,{_fmt(sy)},0) (0,0,{_fmt(sz)})",
            "space origin: ({},{},{})".format(*map(_fmt, grid.origin)),
            "encoding: raw",
            "endian: little",
            "",
            "",
        ]
    )
    payload = grid.flat().astype("<f8").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(payload)
    except OSError as exc:
        raise VolumeError(f"cannot write {path}: {exc}") from exc


def _parse_vector(text):
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise VolumeError(f"malformed vector {text!r}")
    return [float(v) for v in text[1:-1].split(",")]


def load_volume(path) -> VoxelGrid:
    if not os.path.exists(path):
        raise VolumeError(f"no such file: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    split = raw.find(b"\n\n")
    if split < 0:
        raise VolumeError("NRRD header is not terminated by a blank line")
    lines = raw[:split].decode("ascii").splitlines()
    payload = raw[split + 2:]
    if not lines or not lines[0].startswith("NRRD"):
        raise VolumeError("missing NRRD magic line")

    fields = {}
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise VolumeError(f"malformed header line {line!r}")
        key, value = line.split(":", 1)
        key = key.strip()
        if key in fields:
            raise VolumeError(f"duplicate header field {key!r}")
        fields[key] = value.strip()
    for key in _REQUIRED:
        if key not in fields:
            raise VolumeError(f"missing header field {key!r}")

    if fields["type"] not in ("double", "float64"):
        raise VolumeError(f"unsupported type {fields['type']!r}")
    if fields["encoding"] != "raw":
        raise VolumeError(f"unsupported encoding {fields['encoding']!r}")
    if fields["endian"] != "little":
        raise VolumeError(f"unsupported endianness {fields['endian']!r}")
    if int(fields["dimension"]) != 3:
        raise VolumeError("only 3D volumes are supported")

    dims = tuple(int(v) for v in fields["sizes"].split())
    if len(dims) != 3:
        raise VolumeError(f"bad sizes field {fields['sizes']!r}")
    dirs = [_parse_vector(t + ")") for t in fields["space directions"].replace(" ", "").split(")") if t]
    if len(dirs) != 3:
        raise VolumeError("space directions must list 3 vectors")
    spacing = []
    for axis, vec in enumerate(dirs):
        off = [v for a, v in enumerate(vec) if a != axis]
        if len(vec) != 3 or any(off):
            raise VolumeError("only axis-aligned space directions are supported")
        spacing.append(vec[axis])
    origin = _parse_vector(fields["space origin"])

    count = dims[0] * dims[1] * dims[2]
    if len(payload) != 8 * count:
        raise VolumeError(
            f"data byte count {len(payload)} does not match {count} doubles ({8 * count} bytes)"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(dims, order="F")
    return VoxelGrid(data.astype(np.float64), tuple(spacing), tuple(origin))


# ---------------------------------------------------------------------------
# preprocessing


def clip_normalize(grid: VoxelGrid, cfg: PreprocessConfig = PreprocessConfig()) -> VoxelGrid:
    return grid.with_data(np.clip(grid.data, cfg.clip_lo, cfg.clip_hi) / cfg.clip_hi)


def _catmull_rom_matrix(n_in, n_out, factor):
    # Output centre j maps to input index u = j/f + (1/f - 1)/2 so both grids
    # share the same outer cell boundary.
    u = np.arange(n_out) / factor + 0.5 * (1.0 / factor - 1.0)
    base = np.floor(u).astype(int)
    t = u - base
    t2, t3 = t * t, t * t * t
    weights = (
        0.5 * (-t3 + 2 * t2 - t),
        0.5 * (3 * t3 - 5 * t2 + 2),
        0.5 * (-3 * t3 + 4 * t2 + t),
        0.5 * (t3 - t2),
    )
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for offset, w in zip((-1, 0, 1, 2), weights):
        cols = np.clip(base + offset, 0, n_in - 1)
        np.add.at(mat, (rows, cols), w)
    return mat


def resample_cubic(grid: VoxelGrid, factor: float) -> VoxelGrid:
    """Separable Catmull-Rom resampling by ``factor`` (edges replicate)."""
    if factor <= 0:
        raise VolumeError("factor must be positive")
    dims_out = tuple(int(round(n * factor)) for n in grid.dims)
    if min(dims_out) < 2:
        raise VolumeError(f"output dims {dims_out} would be smaller than 2")
    out = grid.data
    for axis in range(3):
        mat = _catmull_rom_matrix(grid.dims[axis], dims_out[axis], factor)
        out = np.moveaxis(np.tensordot(mat, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    spacing = tuple(s / factor for s in grid.spacing)
    origin = tuple(o - 0.5 * s + 0.5 * so for o, s, so in zip(grid.origin, grid.spacing, spacing))
    return VoxelGrid(out, spacing, origin)


def flip(grid: VoxelGrid, axis: int) -> VoxelGrid:
    return grid.with_data(np.flip(grid.data, axis=axis))


def rotate90(grid: VoxelGrid, k: int, axes=(0, 1)) -> VoxelGrid:
    spacing = list(grid.spacing)
    if k % 2:
        spacing[axes[0]], spacing[axes[1]] = spacing[axes[1]], spacing[axes[0]]
    return VoxelGrid(np.rot90(grid.data, k, axes=axes), tuple(spacing), grid.origin)


def random_crop_augment(grid: VoxelGrid, label: VoxelGrid, cfg: PreprocessConfig, seed=None):
    """Paired random crop, flips and in-plane quarter turns.

    The same transform is applied to image and label.  ``seed`` overrides
    ``cfg.seed`` so callers can draw many crops from one config.
    """
    if not grid.same_geometry(label):
        raise VolumeError("image and label are not co-registered")
    crop = tuple(int(c) for c in cfg.crop_dims)
    if any(c > n for c, n in zip(crop, grid.dims)):
        raise VolumeError(f"crop {crop} larger than volume {grid.dims}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    start = [int(rng.integers(0, n - c + 1)) for c, n in zip(crop, grid.dims)]
    sl = tuple(slice(s, s + c) for s, c in zip(start, crop))
    origin = tuple(o + s * sp for o, s, sp in zip(grid.origin, start, grid.spacing))
    img = VoxelGrid(grid.data[sl], grid.spacing, origin)
    lab = VoxelGrid(label.data[sl], label.spacing, origin)
    for axis, allowed in enumerate(cfg.flip_axes):
        if allowed and rng.random() < 0.5:
            img, lab = flip(img, axis), flip(lab, axis)
    if cfg.rotate90 and crop[0] == crop[1]:
        k = int(rng.integers(0, 4))
        img, lab = rotate90(img, k), rotate90(lab, k)
    return img, lab


def mask_background(image: VoxelGrid, label: VoxelGrid) -> VoxelGrid:
    if not image.same_geometry(label):
        raise VolumeError("image and label geometry differ")
    return image.with_data(np.where(label.data == 1, image.data, 0.0))


# ---------------------------------------------------------------------------
# fields and sampling


def gradient_magnitude_field(image: VoxelGrid):
    """Return ``(G, grad G)`` where ``G = |grad image|`` in physical units."""
    if min(image.dims) < 3:
        raise VolumeError("gradient needs at least 3 voxels per axis")
    grads = np.gradient(image.data, *image.spacing, edge_order=1)
    mag = np.sqrt(sum(g * g for g in grads))
    grad_mag = np.stack(np.gradient(mag, *image.spacing, edge_order=1), axis=-1)
    return image.with_data(mag), VectorGrid(grad_mag, image.spacing, image.origin)


def sample_trilinear(field, points):
    """Trilinear interpolation at physical ``points`` (shape ``(3,)`` or ``(N, 3)``).

    Points outside the grid are clamped onto the border.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dims = np.array(field.dims)
    u = (pts - np.array(field.origin)) / np.array(field.spacing)
    u = np.clip(u, 0.0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(int), np.maximum(dims - 2, 0))
    t = u - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    data = field.data
    out = 0.0
    for cx in (0, 1):
        wx = t[:, 0] if cx else 1 - t[:, 0]
        ix = i1[:, 0] if cx else i0[:, 0]
        for cy in (0, 1):
            wy = t[:, 1] if cy else 1 - t[:, 1]
            iy = i1[:, 1] if cy else i0[:, 1]
            for cz in (0, 1):
                wz = t[:, 2] if cz else 1 - t[:, 2]
                iz = i1[:, 2] if cz else i0[:, 2]
                w = wx * wy * wz
                vals = data[ix, iy, iz]
                out = out + (w[:, None] * vals if vals.ndim == 2 else w * vals)
    return out[0] if single else out
