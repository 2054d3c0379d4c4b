"""Surface regularizers: normal consistency, edge uniformity, uniform Laplacian.

The torch versions operate on a vertex tensor so they can sit inside an
autograd graph (smoothing, deformation); ``mesh_losses`` is the float front end.
"""

from __future__ import annotations

import numpy as np
import torch

from .core import MeshError, TriMesh


class MeshTopology:
    """Index tensors shared by every loss evaluation on one connectivity."""

    def __init__(self, mesh: TriMesh):
        ie = mesh.internal_edges
        if len(ie) == 0:
            raise MeshError("mesh has no internal edges")
        self.n_vertices = mesh.n_vertices
        self.faces = torch.tensor(mesh.faces)
        self.edges = torch.tensor(mesh.edges)
        self.face_pairs = torch.tensor(ie[:, 2:4])
        e = mesh.edges
        deg = np.bincount(e.ravel(), minlength=mesh.n_vertices)
        self.degree = torch.as_tensor(np.maximum(deg, 1), dtype=torch.float64)


def face_normals_t(v, faces):
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    cr = torch.linalg.cross(b - a, c - a)
    return cr / cr.norm(dim=1, keepdim=True)


def laplacian_residuals_t(v, topo: MeshTopology):
    """``s_i - mean(neighbours of i)`` per vertex."""
    e = topo.edges
    acc = torch.zeros_like(v)
    acc = acc.index_add(0, e[:, 0], v[e[:, 1]]).index_add(0, e[:, 1], v[e[:, 0]])
    return v - acc / topo.degree[:, None]


def loss_terms_t(v, topo: MeshTopology, lap_mask=None):
    """(normal, edge, laplacian) as 0-d tensors.

    ``lap_mask`` restricts the Laplacian mean to a vertex subset.
    """
    n = face_normals_t(v, topo.faces)
    n1, n2 = n[topo.face_pairs[:, 0]], n[topo.face_pairs[:, 1]]
    l_normal = (1.0 - (n1 * n2).sum(dim=1)).mean()
    e = topo.edges
    lengths = (v[e[:, 0]] - v[e[:, 1]]).norm(dim=1)
    l_edge = ((lengths - lengths.mean()) ** 2).mean()
    sq = (laplacian_residuals_t(v, topo) ** 2).sum(dim=1)
    l_lap = sq.mean() if lap_mask is None else sq[lap_mask].mean()
    return l_normal, l_edge, l_lap


def check_faces(mesh: TriMesh, tol=1e-14):
    bad = np.flatnonzero(mesh.face_areas <= tol)
    if len(bad):
        raise MeshError(f"face {int(bad[0])} is degenerate (zero area)")


def laplacian_residuals(mesh: TriMesh):
    topo = MeshTopology(mesh)
    return laplacian_residuals_t(torch.tensor(mesh.vertices), topo).numpy()


def mesh_losses(mesh: TriMesh):
    """Return ``(L_normal, L_edge, L_laplacian)`` as floats."""
    check_faces(mesh)
    topo = MeshTopology(mesh)
    with torch.no_grad():
        terms = loss_terms_t(torch.tensor(mesh.vertices), topo)
    return tuple(float(t) for t in terms)
