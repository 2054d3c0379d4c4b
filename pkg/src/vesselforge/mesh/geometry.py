"""Exact closest-point queries against triangle meshes."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to ``p``; all arrays (N, 3).

    Returns ``(points, barycentric)`` with barycentric weights of shape (N, 3).
    Region classification follows Ericson, *Real-Time Collision Detection* 5.1.5.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    n = len(p)
    bary = np.zeros((n, 3))
    done = np.zeros(n, bool)

    def take(mask, w):
        nonlocal done
        m = mask & ~done
        bary[m] = w[m] if np.ndim(w) == 2 else w
        done |= m

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0) & (d2 <= 0), np.array([1.0, 0.0, 0.0]))
        take((d3 >= 0) & (d4 <= d3), np.array([0.0, 1.0, 0.0]))
        take((d6 >= 0) & (d5 <= d6), np.array([0.0, 0.0, 1.0]))
        v = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), np.column_stack([1 - v, v, np.zeros(n)]))
        w = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), np.column_stack([1 - w, np.zeros(n), w]))
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), np.column_stack([np.zeros(n), 1 - w, w]))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        take(np.ones(n, bool), np.column_stack([1 - v - w, v, w]))
    pts = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return pts, bary


class SurfaceLocator:
    """Nearest-surface-point queries on a fixed mesh (read-only, reusable)."""

    def __init__(self, mesh, k=12):
        self.mesh = mesh
        tri = mesh.vertices[mesh.faces]
        self._tri = tri
        self._centroids = tri.mean(axis=1)
        self._radius = np.linalg.norm(tri - self._centroids[:, None, :], axis=2).max()
        self._tree = cKDTree(self._centroids)
        self._k = min(k, len(self._centroids))

    def _exact(self, q, cand):
        tri = self._tri[cand]
        pts, bary = closest_point_on_triangles(q, tri[:, 0], tri[:, 1], tri[:, 2])
        return pts, bary, np.linalg.norm(pts - q, axis=1)

    def query(self, points, chunk=20000):
        """Return ``(closest points, face index, barycentric, distance)``."""
        points = np.atleast_2d(np.asarray(points, float))
        n = len(points)
        out_p = np.empty((n, 3))
        out_f = np.empty(n, np.int64)
        out_b = np.empty((n, 3))
        out_d = np.empty(n)
        for s in range(0, n, chunk):
            q = points[s:s + chunk]
            self._query_chunk(q, out_p[s:s + chunk], out_f[s:s + chunk], out_b[s:s + chunk], out_d[s:s + chunk])
        return out_p, out_f, out_b, out_d

    def _query_chunk(self, q, op, of, ob, od):
        m = len(q)
        pending = np.arange(m)
        k = self._k
        n_tri = len(self._centroids)
        while len(pending):
            kk = min(k, n_tri)
            dk, ik = self._tree.query(q[pending], k=kk)
            dk = dk.reshape(len(pending), kk)
            ik = ik.reshape(len(pending), kk)
            pts, bary, dist = self._exact(np.repeat(q[pending], kk, axis=0), ik.ravel())
            dist = dist.reshape(-1, kk)
            best = np.argmin(dist, axis=1)
            rows = np.arange(len(pending))
            op[pending] = pts.reshape(-1, kk, 3)[rows, best]
            ob[pending] = bary.reshape(-1, kk, 3)[rows, best]
            of[pending] = ik[rows, best]
            od[pending] = dist[rows, best]
            if kk == n_tri:
                break
            # unseen triangles are at least (k-th centroid distance - R) away
            pending = pending[od[pending] > dk[:, -1] - self._radius]
            k *= 4

    def interpolated_normals(self, faces, bary):
        vn = self.mesh.vertex_normals[self.mesh.faces[faces]]
        n = np.einsum("ij,ijk->ik", bary, vn)
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
