"""Posterior-sample ensembles and overlapping-tile prediction."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..volume import VoxelGrid
from .network import forward


class InferenceError(ValueError):
    pass


class Ensemble(NamedTuple):
    mean: VoxelGrid
    std: VoxelGrid
    binaries: list


def _sample_seeds(seed, k):
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(k)]


def predict_samples(net, volume: VoxelGrid, k: int, seed: int, tile=None, overlap=16):
    """``k`` probability maps, one posterior weight draw each."""
    if k < 1:
        raise InferenceError("need at least one sample")
    out = []
    for s in _sample_seeds(seed, k):
        if tile is None:
            out.append(forward(net, volume, s))
        else:
            out.append(stitch_tiles(net, volume, tile, overlap, s))
    return out


def ensemble_from_samples(samples) -> Ensemble:
    stack = np.stack([s.data for s in samples])
    ref = samples[0]
    return Ensemble(
        ref.with_data(stack.mean(axis=0)),
        ref.with_data(stack.std(axis=0)),
        [s.with_data((s.data > 0.5).astype(float)) for s in samples],
    )


def predict_ensemble(net, volume: VoxelGrid, k: int, seed: int, tile=None, overlap=16) -> Ensemble:
    """Mean and standard deviation over ``k`` samples plus the thresholded samples."""
    if k < 2:
        raise InferenceError("an ensemble needs K >= 2 samples")
    return ensemble_from_samples(predict_samples(net, volume, k, seed, tile, overlap))


def _starts(n, tile, step):
    starts = list(range(0, n - tile + 1, step))
    if starts[-1] != n - tile:
        starts.append(n - tile)
    return starts


def stitch_tiles(net, volume: VoxelGrid, tile=64, overlap=16, seed=0, predict=None) -> VoxelGrid:
    """Average of overlapping cubic tile predictions; every tile uses the same weight draw."""
    tile = int(tile)
    if any(n < tile for n in volume.dims):
        raise InferenceError(f"volume {volume.dims} smaller than tile {tile}")
    if not 0 <= overlap < tile:
        raise InferenceError("overlap must lie in [0, tile)")
    predict = predict or (lambda cube: forward(net, cube, seed).data)
    acc = np.zeros(volume.dims)
    cnt = np.zeros(volume.dims)
    step = tile - overlap
    for i in _starts(volume.dims[0], tile, step):
        for j in _starts(volume.dims[1], tile, step):
            for k in _starts(volume.dims[2], tile, step):
                sl = (slice(i, i + tile), slice(j, j + tile), slice(k, k + tile))
                cube = VoxelGrid(volume.data[sl], volume.spacing, volume.origin)
                acc[sl] += predict(cube)
                cnt[sl] += 1
    return volume.with_data(acc / cnt)
