from __future__ import annotations

import numpy as np


def farthest_point_sample(points, n, start_index=0):
    """Greedy farthest-point subset of ``n`` indices; ties go to the lowest index."""
    p = np.asarray(points, float).reshape(-1, 3)
    if n > len(p):
        raise ValueError(f"cannot sample {n} points from {len(p)}")
    if n < 1:
        return np.zeros(0, np.int64)
    idx = np.empty(n, np.int64)
    idx[0] = start_index
    dist = np.linalg.norm(p - p[start_index], axis=1)
    for k in range(1, n):
        idx[k] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(p - p[idx[k]], axis=1))
    return idx
