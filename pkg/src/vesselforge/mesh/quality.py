from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class MeshQualityReport:
    watertight: bool
    euler_characteristic: int
    min_angle_deg: float
    mean_angle_deg: float
    edge_length_mean: float
    edge_length_cv: float
    self_intersections: int
    pairs_checked: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _segments_hit_triangles(p0, p1, a, b, c, eps=1e-12):
    """Moller-Trumbore segment/triangle test, vectorised; excludes touching at endpoints."""
    d = p1 - p0
    e1 = b - a
    e2 = c - a
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = p0 - a
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = inv * np.einsum("ij,ij->i", d, q)
    t = inv * np.einsum("ij,ij->i", e2, q)
    return ok & (u > eps) & (v > eps) & (u + v < 1 - eps) & (t > eps) & (t < 1 - eps)


def count_self_intersections(mesh, max_pairs=20000, seed=0):
    """Sampled count of intersecting non-adjacent face pairs."""
    if mesh.n_faces < 2:
        return 0, 0
    tri = mesh.vertices[mesh.faces]
    cen = tri.mean(axis=1)
    reach = 2.0 * np.linalg.norm(tri - cen[:, None], axis=2).max()
    pairs = np.array(sorted(cKDTree(cen).query_pairs(reach)), dtype=np.int64).reshape(-1, 2)
    f = mesh.faces
    shared = (f[pairs[:, 0], :, None] == f[pairs[:, 1], None, :]).any(axis=(1, 2))
    pairs = pairs[~shared]
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        pairs = pairs[rng.choice(len(pairs), max_pairs, replace=False)]
    hit = np.zeros(len(pairs), bool)
    for first, second in ((0, 1), (1, 0)):
        t1, t2 = tri[pairs[:, first]], tri[pairs[:, second]]
        for k in range(3):
            hit |= _segments_hit_triangles(t1[:, k], t1[:, (k + 1) % 3], t2[:, 0], t2[:, 1], t2[:, 2])
    return int(hit.sum()), int(len(pairs))


def quality_report(mesh) -> MeshQualityReport:
    ang = np.degrees(mesh.corner_angles) if mesh.n_faces else np.zeros((0, 3))
    lengths = mesh.edge_lengths()
    mean = float(lengths.mean()) if len(lengths) else 0.0
    cv = float(lengths.std() / mean) if mean > 0 else 0.0
    hits, checked = count_self_intersections(mesh)
    return MeshQualityReport(
        watertight=bool(mesh.is_watertight()),
        euler_characteristic=mesh.euler_characteristic(),
        min_angle_deg=float(ang.min()) if ang.size else 0.0,
        mean_angle_deg=float(ang.mean()) if ang.size else 0.0,
        edge_length_mean=mean,
        edge_length_cv=cv,
        self_intersections=hits,
        pairs_checked=checked,
    )
