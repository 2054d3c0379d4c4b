"""Balanced gate: split cubes by voxel percentage and draw equal quotas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .kernels import DEFAULT_SCALES, fft_correlate, log_kernel_t

# fixed LoG bank response -> pseudo-probability, see gate_response
GATE_TAU = 0.05
GATE_GAIN = 40.0


class GateImbalanceError(ValueError):
    def __init__(self, n_large, n_small):
        super().__init__(f"balanced gate needs both groups: {n_large} large, {n_small} small cubes")
        self.n_large = n_large
        self.n_small = n_small


@dataclass(frozen=True)
class BalancedGate:
    threshold: float = 0.15
    quota: int = 5
    batch_size: int = 10

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("gate threshold must lie in (0, 1)")
        if 2 * self.quota != self.batch_size:
            raise ValueError("batch size must be twice the per-group quota")

    def is_large(self, vp):
        return np.asarray(vp) > self.threshold


def voxel_percentage(cube):
    data = getattr(cube, "data", cube)
    if isinstance(data, torch.Tensor):
        return float((data > 0.5).double().mean())
    return float(np.mean(np.asarray(data) > 0.5))


def gate_response(x, scales=DEFAULT_SCALES):
    """LoG-stream response map of normalized cubes ``x`` (B, 1, n, n, n) in (0, 1).

    Largest absolute response over the fixed scale-normalized LoG bank, an
    edge map on both sides of a vessel wall, squashed by a sigmoid around
    ``GATE_TAU``.
    """
    x = torch.as_tensor(x, dtype=torch.float64)
    ks = [log_kernel_t(size, torch.tensor(float(s), dtype=torch.float64)) for size, s in scales]
    with torch.no_grad():
        resp = fft_correlate(x, ks).abs().amax(dim=1, keepdim=True)
    return torch.sigmoid(GATE_GAIN * (resp - GATE_TAU))


def balanced_indices(vps, gate: BalancedGate, rng):
    """Pool indices of one balanced batch: ``quota`` large then ``quota`` small."""
    large = np.flatnonzero(gate.is_large(vps))
    small = np.flatnonzero(~gate.is_large(vps))
    if len(large) == 0 or len(small) == 0:
        raise GateImbalanceError(len(large), len(small))
    out = []
    for group in (large, small):
        replace = len(group) < gate.quota
        out.append(rng.choice(group, size=gate.quota, replace=replace))
    return np.concatenate(out)


def assemble_balanced_batch(pool, gate: BalancedGate = BalancedGate(), seed=0):
    """``pool`` holds ``(cube, label, vp)`` triples; returns the 10 selected triples."""
    vps = np.array([item[2] for item in pool], float)
    idx = balanced_indices(vps, gate, np.random.default_rng(seed))
    return [pool[i] for i in idx]
