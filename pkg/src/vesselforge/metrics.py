"""Segmentation and surface metrics, ensemble statistics and the SNR regression."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh.core import TriMesh
from .mesh.geometry import SurfaceLocator
from .volume import VoxelGrid

SNR_CAP = 1e6


class MetricError(ValueError):
    pass


def _binary(x):
    return np.asarray(x.data if isinstance(x, VoxelGrid) else x) > 0.5


def dice_voxel(a, b):
    """2|a∩b| / (|a| + |b|) for binary grids; empty against empty is 1."""
    if isinstance(a, VoxelGrid) and isinstance(b, VoxelGrid):
        if not a.same_geometry(b):
            raise MetricError("grids differ in geometry")
    a, b = _binary(a), _binary(b)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    den = int(a.sum()) + int(b.sum())
    if den == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / den


def _points(s):
    p = s.vertices if isinstance(s, TriMesh) else s
    p = np.asarray(p, float).reshape(-1, 3)
    if len(p) == 0:
        raise MetricError("point set is empty")
    return p


def _dist(a, b):
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def nearest_distances_bruteforce(src, dst):
    """For each point of ``src`` the distance to the closest point of ``dst`` (O(nm))."""
    src, dst = _points(src), _points(dst)
    return np.array([_dist(p[None, :], dst).min() for p in src])


def nearest_distances(src, dst, k=4):
    """Tree-accelerated version of :func:`nearest_distances_bruteforce`.

    Candidates come from a k-d tree; the final distances are recomputed with the
    same arithmetic as the brute-force path so both agree bit for bit.
    """
    src, dst = _points(src), _points(dst)
    k = min(k, len(dst))
    _, idx = cKDTree(dst).query(src, k=k)
    idx = np.asarray(idx).reshape(len(src), k)
    return _dist(src[:, None, :], dst[idx]).min(axis=1)


def asd(s1, s2, fast=True):
    """Average symmetric surface distance between two point sets (mm)."""
    nd = nearest_distances if fast else nearest_distances_bruteforce
    d12, d21 = nd(s1, s2), nd(s2, s1)
    return float((d12.sum() + d21.sum()) / (len(d12) + len(d21)))


def hausdorff(s1, s2, fast=True):
    """Symmetric Hausdorff distance between two point sets (mm)."""
    nd = nearest_distances if fast else nearest_distances_bruteforce
    return float(max(nd(s1, s2).max(), nd(s2, s1).max()))


@dataclass(frozen=True, eq=False)
class SurfaceEnsembleStats:
    mean_surface: TriMesh
    std: np.ndarray
    snr: np.ndarray

    def __post_init__(self):
        n = self.mean_surface.n_vertices
        if self.std.shape != (n,) or self.snr.shape != (n,):
            raise MetricError("per-vertex arrays must match the mean surface")
        if np.any(self.std < 0):
            raise MetricError("standard deviation must be non-negative")


def correspondences(meshes):
    """Points on every mesh paired with each vertex of the first, shape (K, n, 3)."""
    ref = meshes[0].vertices
    pts = [ref]
    for m in meshes[1:]:
        pts.append(SurfaceLocator(m).query(ref)[0])
    return np.stack(pts)


def surface_ensemble_stats(meshes, image, window=5):
    """Mean surface, per-vertex spread and local SNR of a posterior mesh ensemble.

    The spread is the RMS distance of the K paired points from their mean
    (population form).  SNR is measured on ``image`` at the mean positions.
    """
    meshes = list(meshes)
    if len(meshes) < 2:
        raise MetricError(f"need at least 2 surfaces, got {len(meshes)}")
    pts = correspondences(meshes)
    mean = pts.mean(axis=0)
    std = np.sqrt(((pts - mean) ** 2).sum(axis=2).mean(axis=0))
    surf = meshes[0].with_vertices(mean)
    snr = local_snr(image, mean, window) if image is not None else np.full(len(mean), np.nan)
    return SurfaceEnsembleStats(surf, std, snr)


def local_snr(image: VoxelGrid, points, window=5):
    """mean / stddev of intensities in a ``window``³ block around each point's voxel.

    The block is truncated at the grid border.  Blocks with stddev below 1e-12
    report the cap value 1e6.
    """
    if window < 3 or window % 2 == 0:
        raise MetricError("window must be an odd integer >= 3")
    p = np.atleast_2d(np.asarray(points, float))
    dims = np.array(image.dims)
    ijk = np.rint((p - np.array(image.origin)) / np.array(image.spacing)).astype(np.int64)
    ijk = np.clip(ijk, 0, dims - 1)
    h = window // 2
    lo = np.maximum(ijk - h, 0)
    hi = np.minimum(ijk + h + 1, dims)
    out = np.empty(len(p))
    data = image.data
    for n in range(len(p)):
        block = data[lo[n, 0]:hi[n, 0], lo[n, 1]:hi[n, 1], lo[n, 2]:hi[n, 2]]
        sd = block.std()
        out[n] = SNR_CAP if sd < 1e-12 else min(block.mean() / sd, SNR_CAP)
    return out


def snr_std_regression(snr, std):
    """OLS slope of log10(std) against SNR."""
    x = np.asarray(snr, float).ravel()
    y = np.asarray(std, float).ravel()
    if len(x) != len(y):
        raise MetricError("snr and std differ in length")
    if len(x) < 3:
        raise MetricError("need at least 3 points")
    if np.any(y <= 0):
        raise MetricError("std values must be positive to take log10")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0 or np.ptp(x) == 0:
        raise MetricError("SNR values are all equal")
    ly = np.log10(y)
    return float(xc @ (ly - ly.mean()) / sxx)


METRIC_FIELDS = ("case", "metric", "region", "value")
SIDECAR_FIELDS = ("vertex_index", "std_mm", "snr")


def write_metrics_csv(rows, path):
    """Write ``(case, metric, region, value)`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for case, metric, region, value in rows:
            w.writerow([case, metric, region, repr(float(value))])


def write_std_sidecar(stats: SurfaceEnsembleStats, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIDECAR_FIELDS)
        for i, (s, r) in enumerate(zip(stats.std, stats.snr)):
            w.writerow([i, repr(float(s)), repr(float(r))])
