"""Image misalignment energy and the total deformation objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..mesh.losses import MeshTopology, loss_terms_t


@dataclass(frozen=True)
class DeformLossConfig:
    w1: float = 1.0
    w2: float = 0.2
    w3: float = 0.01
    w4: float = 0.1
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.eps > 0:
            raise ValueError("energy floor must be positive")


class FieldSampler:
    """Differentiable trilinear sampling of a scalar grid, clamped at the border."""

    def __init__(self, grid):
        self.data = torch.tensor(grid.data, dtype=torch.float64)
        self.origin = torch.tensor(grid.origin, dtype=torch.float64)
        self.spacing = torch.tensor(grid.spacing, dtype=torch.float64)
        self.dims = torch.tensor(grid.dims, dtype=torch.float64)

    def __call__(self, p):
        u = (p - self.origin) / self.spacing
        u = torch.minimum(torch.clamp(u, min=0.0), self.dims - 1)
        i0 = torch.minimum(torch.floor(u.detach()), torch.clamp(self.dims - 2, min=0)).long()
        t = u - i0
        i1 = torch.minimum(i0 + 1, (self.dims - 1).long())
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
                    out = out + wx * wy * wz * self.data[ix, iy, iz]
        return out


def misalignment_t(v, sampler: FieldSampler, eps=1e-8):
    total = sampler(v).sum()
    return -torch.log(torch.clamp(total, min=eps))


def misalignment_energy(mesh, field, eps=1e-8):
    """-log(max(sum of G over mesh vertices, eps))."""
    v = mesh.vertices if hasattr(mesh, "vertices") else mesh
    with torch.no_grad():
        return float(misalignment_t(torch.tensor(np.asarray(v, float)), FieldSampler(field), eps))


def total_loss_t(v, sampler, topo: MeshTopology, cfg: DeformLossConfig):
    mis = misalignment_t(v, sampler, cfg.eps)
    normal, edge, lap = loss_terms_t(v, topo)
    total = cfg.w1 * mis + cfg.w2 * normal + cfg.w3 * edge + cfg.w4 * lap
    return total, {"misalign": mis, "normal": normal, "edge": edge, "laplacian": lap}


def total_loss(mesh, field, cfg: DeformLossConfig = DeformLossConfig()):
    """Return ``(total, terms)`` as floats for a mesh and gradient-magnitude grid."""
    with torch.no_grad():
        total, terms = total_loss_t(torch.tensor(mesh.vertices), FieldSampler(field), MeshTopology(mesh), cfg)
    return float(total), {k: float(t) for k, t in terms.items()}
