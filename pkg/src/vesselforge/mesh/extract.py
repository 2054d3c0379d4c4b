from __future__ import annotations

import numpy as np
from skimage import measure

from .core import MeshError, TriMesh


def marching_cubes(grid, iso=0.5) -> TriMesh:
    """Iso-surface of ``grid`` in physical mm, normals pointing toward lower values."""
    data = grid.data
    if min(data.shape) < 2:
        raise MeshError("marching cubes needs at least 2 voxels per axis")
    if not data.min() < iso < data.max():
        raise MeshError(f"iso value {iso} outside data range [{data.min()}, {data.max()}]: empty mesh")
    verts, faces, _, _ = measure.marching_cubes(
        data, level=iso, spacing=grid.spacing, allow_degenerate=False, method="lewiner"
    )
    verts = verts.astype(np.float64) + np.asarray(grid.origin)
    # skimage winds triangles so that the right-hand normal points toward
    # higher values; flip to face the lower side.
    return TriMesh(verts, faces[:, ::-1].astype(np.int64))
