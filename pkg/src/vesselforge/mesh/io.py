from __future__ import annotations

import numpy as np

from .core import MeshError, TriMesh


def write_obj(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"line {lineno}: non-triangle face with {len(idx)} vertices")
                faces.append(idx)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 1 or faces.max() > len(verts)):
        raise MeshError(f"face index out of range 1..{len(verts)} (OBJ indices are 1-based)")
    return TriMesh(np.array(verts, float).reshape(-1, 3), faces - 1)
