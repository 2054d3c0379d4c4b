"""Isotropic remeshing toward a target vertex count.

Split long edges, collapse short ones, flip for valence 6, then relax
tangentially and project back onto the input surface.  The target edge
length is rescaled after each pass so the vertex count converges on the
request.
"""

from __future__ import annotations

import numpy as np

from .core import MeshError, TriMesh
from .geometry import SurfaceLocator


def _key(a, b):
    return (a, b) if a < b else (b, a)


class _Work:
    """Mutable face soup with edge and vertex incidence, used only while remeshing."""

    def __init__(self, mesh: TriMesh):
        self.v = [np.array(p) for p in mesh.vertices]
        self.alive = [True] * len(self.v)
        self.faces = [list(map(int, f)) for f in mesh.faces]
        self.edge_faces = {}
        self.vert_faces = [set() for _ in self.v]
        for fid, f in enumerate(self.faces):
            self._link(fid, f)

    def _link(self, fid, f):
        for k in range(3):
            self.edge_faces.setdefault(_key(f[k], f[(k + 1) % 3]), []).append(fid)
            self.vert_faces[f[k]].add(fid)

    def _unlink(self, fid):
        f = self.faces[fid]
        for k in range(3):
            key = _key(f[k], f[(k + 1) % 3])
            lst = self.edge_faces[key]
            lst.remove(fid)
            if not lst:
                del self.edge_faces[key]
            self.vert_faces[f[k]].discard(fid)
        self.faces[fid] = None

    def _add_face(self, f):
        self.faces.append(list(f))
        self._link(len(self.faces) - 1, f)

    def _replace_face(self, fid, f):
        self._unlink(fid)
        self.faces[fid] = list(f)
        self._link(fid, f)

    def neighbors(self, a):
        out = set()
        for fid in self.vert_faces[a]:
            out.update(self.faces[fid])
        out.discard(a)
        return out

    def _opposite(self, fid, a, b):
        return next(x for x in self.faces[fid] if x != a and x != b)

    def _normal(self, f, pos=None):
        p = [pos.get(i, self.v[i]) if pos else self.v[i] for i in f]
        return np.cross(p[1] - p[0], p[2] - p[0])

    def length(self, key):
        return float(np.linalg.norm(self.v[key[0]] - self.v[key[1]]))

    # -- operations -----------------------------------------------------

    def split(self, key):
        a, b = key
        m = len(self.v)
        self.v.append(0.5 * (self.v[a] + self.v[b]))
        self.alive.append(True)
        self.vert_faces.append(set())
        for fid in list(self.edge_faces[key]):
            f = self.faces[fid]
            # rotate so the split edge is (f0, f1) in face order
            while not ({f[0], f[1]} == {a, b}):
                f = f[1:] + f[:1]
            x, y, z = f
            self._replace_face(fid, (x, m, z))
            self._add_face((m, y, z))

    def collapse(self, key, hi):
        a, b = key
        fab = list(self.edge_faces.get(key, []))
        if len(fab) != 2:
            return False
        opp = {self._opposite(fid, a, b) for fid in fab}
        if self.neighbors(a) & self.neighbors(b) != opp:
            return False
        if any(len(self.vert_faces[c]) <= 3 for c in opp):
            return False
        p = 0.5 * (self.v[a] + self.v[b])
        moved = {a: p, b: p}
        touched = (self.vert_faces[a] | self.vert_faces[b]) - set(fab)
        for fid in touched:
            f = self.faces[fid]
            for i in f:
                if i not in (a, b) and np.linalg.norm(self.v[i] - p) > hi:
                    return False
            n0 = self._normal(f)
            n1 = self._normal(f, moved)
            if np.dot(n0, n1) <= 0.2 * np.linalg.norm(n0) * np.linalg.norm(n1):
                return False
        for fid in fab:
            self._unlink(fid)
        for fid in list(self.vert_faces[b]):
            self._replace_face(fid, [a if i == b else i for i in self.faces[fid]])
        self.v[a] = p
        self.alive[b] = False
        return True

    def flip(self, key):
        a, b = key
        fab = list(self.edge_faces.get(key, []))
        if len(fab) != 2:
            return False
        f1, f2 = fab
        # orient so that f1 holds a->b
        fa = self.faces[f1]
        if not any(fa[k] == a and fa[(k + 1) % 3] == b for k in range(3)):
            f1, f2 = f2, f1
        c = self._opposite(f1, a, b)
        d = self._opposite(f2, a, b)
        if _key(c, d) in self.edge_faces:
            return False
        val = {i: len(self.vert_faces[i]) for i in (a, b, c, d)}
        if val[a] <= 3 or val[b] <= 3:
            return False
        before = sum((val[i] - 6) ** 2 for i in (a, b, c, d))
        after = (val[a] - 7) ** 2 + (val[b] - 7) ** 2 + (val[c] - 5) ** 2 + (val[d] - 5) ** 2
        if after >= before:
            return False
        new1, new2 = (c, a, d), (d, b, c)
        ref = self._normal(self.faces[f1]) + self._normal(self.faces[f2])
        for nf in (new1, new2):
            n = self._normal(nf)
            if np.dot(n, ref) <= 0.2 * np.linalg.norm(n) * np.linalg.norm(ref):
                return False
        self._replace_face(f1, new1)
        self._replace_face(f2, new2)
        return True

    def to_mesh(self):
        idx = np.cumsum(self.alive) - 1
        verts = np.array([p for p, ok in zip(self.v, self.alive) if ok])
        faces = np.array([[idx[i] for i in f] for f in self.faces if f is not None], np.int64)
        return TriMesh(verts, faces)


def _target_length(mesh, n_vertices):
    # closed mesh: F ~ 2V, equilateral area sqrt(3)/4 L^2
    area = mesh.face_areas.sum()
    return float(np.sqrt(4.0 * area / (np.sqrt(3.0) * 2.0 * n_vertices)))


def _relax(mesh: TriMesh, locator: SurfaceLocator, weight=0.5):
    v = mesh.vertices
    e = mesh.edges
    acc = np.zeros_like(v)
    np.add.at(acc, e[:, 0], v[e[:, 1]])
    np.add.at(acc, e[:, 1], v[e[:, 0]])
    deg = np.bincount(e.ravel(), minlength=len(v))[:, None]
    d = acc / deg - v
    n = mesh.vertex_normals
    d -= np.einsum("ij,ij->i", d, n)[:, None] * n
    proj, _, _, _ = locator.query(v + weight * d)
    return mesh.with_vertices(proj)


def remesh_uniform(mesh: TriMesh, target_vertex_count: int, iterations=12, relax_steps=3):
    """Remesh ``mesh`` to roughly ``target_vertex_count`` vertices with near-uniform edges."""
    if target_vertex_count < 100:
        raise MeshError("target vertex count must be at least 100")
    if not mesh.is_watertight():
        raise MeshError("remeshing requires a watertight mesh")
    locator = SurfaceLocator(mesh)
    length = _target_length(mesh, target_vertex_count)
    cur = mesh
    for it in range(iterations):
        hi, lo = 4.0 / 3.0 * length, 4.0 / 5.0 * length
        work = _Work(cur)
        for key in list(work.edge_faces):
            if key in work.edge_faces and work.length(key) > hi:
                work.split(key)
        for key in list(work.edge_faces):
            if key in work.edge_faces and work.alive[key[0]] and work.alive[key[1]] \
                    and work.length(key) < lo:
                work.collapse(key, hi)
        for key in list(work.edge_faces):
            if key in work.edge_faces:
                work.flip(key)
        cur = work.to_mesh()
        for _ in range(relax_steps):
            cur = _relax(cur, locator)
        ratio = cur.n_vertices / target_vertex_count
        if it >= 3 and abs(ratio - 1.0) < 0.03:
            break
        length *= np.sqrt(ratio)
    return cur
