from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle surface, vertices in mm, faces counter-clockwise outward."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if f.size:
            rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if rep.any():
                raise MeshError(f"face {int(np.flatnonzero(rep)[0])} repeats a vertex")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def with_vertices(self, vertices):
        return TriMesh(vertices, self.faces)

    # -- topology ---------------------------------------------------------

    @cached_property
    def _half_edges(self):
        f = self.faces
        return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])

    @cached_property
    def edges(self):
        """Unique undirected edges, shape (E, 2), sorted per row."""
        he = np.sort(self._half_edges, axis=1)
        return np.unique(he, axis=0) if len(he) else np.zeros((0, 2), np.int64)

    @cached_property
    def edge_face_counts(self):
        he = np.sort(self._half_edges, axis=1)
        _, counts = np.unique(he, axis=0, return_counts=True)
        return counts

    @cached_property
    def internal_edges(self):
        """(edge vertex a, edge vertex b, face 1, face 2) for edges shared by exactly two faces."""
        nf = self.n_faces
        he = self._half_edges
        face_of = np.tile(np.arange(nf), 3)
        key = np.sort(he, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        key, face_of = key[order], face_of[order]
        same = np.all(key[1:] == key[:-1], axis=1)
        # exactly-two groups: a match not preceded or followed by another match
        prev = np.concatenate([[False], same[:-1]])
        nxt = np.concatenate([same[1:], [False]])
        pick = np.flatnonzero(same & ~prev & ~nxt)
        return np.column_stack([key[pick, 0], key[pick, 1], face_of[pick], face_of[pick + 1]])

    @cached_property
    def neighbors(self):
        """Sorted neighbour index array per vertex."""
        e = self.edges
        both = np.concatenate([e, e[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        splits = np.searchsorted(both[:, 0], np.arange(1, self.n_vertices))
        return np.split(both[:, 1], splits)

    def is_watertight(self) -> bool:
        if not self.n_faces:
            return False
        if not np.all(self.edge_face_counts == 2):
            return False
        # consistent orientation: each directed half-edge appears once
        he = self._half_edges
        return len(np.unique(he, axis=0)) == len(he)

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return int(len(used) - len(self.edges) + self.n_faces)

    # -- geometry ---------------------------------------------------------

    @cached_property
    def face_areas(self):
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @cached_property
    def _face_cross(self):
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @cached_property
    def face_normals(self):
        c = self._face_cross
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(n > 0, n, 1.0)

    @cached_property
    def corner_angles(self):
        v = self.vertices
        f = self.faces
        out = np.empty(f.shape)
        for k in range(3):
            a = v[f[:, (k + 1) % 3]] - v[f[:, k]]
            b = v[f[:, (k + 2) % 3]] - v[f[:, k]]
            cos = np.einsum("ij,ij->i", a, b) / np.maximum(
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1), 1e-300
            )
            out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
        return out

    @cached_property
    def vertex_normals(self):
        """Angle-weighted vertex normals."""
        acc = np.zeros_like(self.vertices)
        fn = self.face_normals
        ang = self.corner_angles
        for k in range(3):
            np.add.at(acc, self.faces[:, k], fn * ang[:, k:k + 1])
        n = np.linalg.norm(acc, axis=1, keepdims=True)
        return acc / np.where(n > 0, n, 1.0)

    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def volume(self):
        v = self.vertices
        f = self.faces
        return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


def largest_component(mesh: TriMesh) -> TriMesh:
    """Keep the face-connected component with the most faces; unused vertices are dropped."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    if mesh.n_faces == 0:
        raise MeshError("mesh has no faces")
    he = mesh._half_edges
    n = mesh.n_vertices
    adj = coo_matrix((np.ones(len(he)), (he[:, 0], he[:, 1])), shape=(n, n))
    _, lab = connected_components(adj, directed=False)
    face_lab = lab[mesh.faces[:, 0]]
    keep_lab = np.argmax(np.bincount(face_lab))
    faces = mesh.faces[face_lab == keep_lab]
    used = np.unique(faces)
    remap = np.full(n, -1, np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[faces])


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return TriMesh(v, np.array(faces))
