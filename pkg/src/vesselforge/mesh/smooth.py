"""Regularizer-driven smoothing by gradient descent with backtracking."""

from __future__ import annotations

import numpy as np
import torch

from .core import MeshError, TriMesh
from .losses import MeshTopology, check_faces, loss_terms_t


def smooth_minimize(mesh: TriMesh, weights=(0.2, 0.01, 0.1), steps=100, lr=20.0, fixed=None,
                    max_halvings=30):
    """Minimize ``w2*L_normal + w3*L_edge + w4*L_laplacian`` over vertex positions.

    A step that raises the loss is retried with half the step size; ``lr`` is
    then kept for the following steps.  ``fixed`` is an optional boolean vertex
    mask: those vertices do not move and are left out of the Laplacian mean.
    Connectivity is never modified.
    """
    check_faces(mesh)
    w = torch.tensor(weights, dtype=torch.float64)
    topo = MeshTopology(mesh)
    free = torch.ones(mesh.n_vertices, dtype=torch.bool)
    if fixed is not None:
        free = ~torch.tensor(np.asarray(fixed, bool))
    lap_mask = None if fixed is None else free

    def loss_of(v):
        terms = loss_terms_t(v, topo, lap_mask)
        return w[0] * terms[0] + w[1] * terms[1] + w[2] * terms[2]

    v = torch.tensor(mesh.vertices, dtype=torch.float64)
    step = float(lr)
    for it in range(steps):
        v.requires_grad_(True)
        loss = loss_of(v)
        if not torch.isfinite(loss):
            raise MeshError(f"non-finite smoothing loss at step {it}")
        (g,) = torch.autograd.grad(loss, v)
        g = g * free[:, None]
        if float(g.abs().max()) == 0.0:
            break
        v = v.detach()
        accepted = False
        with torch.no_grad():
            for _ in range(max_halvings):
                trial = v - step * g
                tl = loss_of(trial)
                if torch.isfinite(tl) and tl <= loss:
                    v = trial
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            break
    return mesh.with_vertices(v.detach().numpy())


def smoothing_loss(mesh: TriMesh, weights=(0.2, 0.01, 0.1)):
    topo = MeshTopology(mesh)
    with torch.no_grad():
        terms = loss_terms_t(torch.tensor(mesh.vertices), topo)
    return float(sum(wi * t for wi, t in zip(weights, terms)))
