"""Triangle surfaces: extraction, remeshing, smoothing, voxelization, I/O."""

from .core import MeshError, TriMesh, icosphere, largest_component
from .extract import marching_cubes
from .geometry import SurfaceLocator, closest_point_on_triangles
from .io import read_obj, write_obj
from .losses import laplacian_residuals, mesh_losses
from .quality import MeshQualityReport, quality_report
from .remesh import remesh_uniform
from .smooth import smooth_minimize
from .voxelize import voxelize_by_normal

__all__ = [
    "MeshError", "TriMesh", "icosphere", "largest_component", "marching_cubes", "SurfaceLocator",
    "closest_point_on_triangles", "read_obj", "write_obj", "laplacian_residuals",
    "mesh_losses", "MeshQualityReport", "quality_report", "remesh_uniform",
    "smooth_minimize", "voxelize_by_normal",
]
