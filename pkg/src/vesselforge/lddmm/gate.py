"""Scaling gate that immobilizes inlet and outlet caps."""

from __future__ import annotations

import numpy as np


def scaling_field(points, io):
    """Per-point mobility alpha in [0, 1]; the minimum over all caps.

    For a cap with centre ``c`` and radius ``r`` and buffer ``sb``:
    0 inside ``r``, ``1 - exp(-(d - r)^2 / (2 sb^2))`` on ``[r, r + 3 sb)``,
    and 1 beyond.
    """
    p = np.atleast_2d(np.asarray(points, float))
    d = np.linalg.norm(p[:, None, :] - io.centers[None, :, :], axis=2)
    r = io.radii[None, :]
    sb = io.buffer
    a = np.where(d < r, 0.0, np.where(d < r + 3 * sb, 1.0 - np.exp(-((d - r) ** 2) / (2 * sb ** 2)), 1.0))
    return a.min(axis=1)


class ScalingGate:
    def __init__(self, io):
        self.io = io

    def alpha(self, points):
        return scaling_field(points, self.io)

    def to_dict(self):
        return self.io.to_dict()
