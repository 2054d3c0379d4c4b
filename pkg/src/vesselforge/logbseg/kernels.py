"""Gaussian and Laplacian-of-Gaussian kernels, dense 3D correlation, scale responses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from ..volume import VoxelGrid


class KernelError(ValueError):
    pass


DEFAULT_SCALES = ((3, 0.5), (5, 1.0), (7, 1.5), (9, 2.0), (11, 2.5))


@dataclass(frozen=True)
class LoGKernelSpec:
    scales: tuple = DEFAULT_SCALES

    def __post_init__(self):
        if not self.scales:
            raise KernelError("at least one LoG scale is required")
        for size, sigma in self.scales:
            _check(size, sigma)

    @property
    def sizes(self):
        return tuple(int(s) for s, _ in self.scales)

    @property
    def sigmas(self):
        return tuple(float(s) for _, s in self.scales)

    def prefix(self, n):
        return LoGKernelSpec(self.scales[:n])


def _check(size, sigma):
    if int(size) != size or size < 3 or size % 2 == 0:
        raise KernelError(f"kernel size must be odd and >= 3, got {size}")
    if not sigma > 0:
        raise KernelError(f"sigma must be positive, got {sigma}")


def _r2(size):
    h = size // 2
    x = np.arange(-h, h + 1, dtype=float)
    return x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2


def make_gaussian_kernel(size, sigma):
    _check(size, sigma)
    g = np.exp(-_r2(size) / (2.0 * sigma ** 2)) / (2.0 * np.pi * sigma ** 2)
    return g / g.sum()


def log_kernel_raw(size, sigma):
    """(r^2 - 2 sigma^2) / sigma^4 * exp(-r^2 / (2 sigma^2)) at integer offsets."""
    _check(size, sigma)
    r2 = _r2(size)
    return (r2 - 2.0 * sigma ** 2) / sigma ** 4 * np.exp(-r2 / (2.0 * sigma ** 2))


def make_log_kernel(size, sigma):
    """LoG kernel with its mean removed so a constant image gives zero response."""
    k = log_kernel_raw(size, sigma)
    return k - k.mean()


def log_kernel_t(size, sigma):
    """Differentiable, scale-normalized zero-sum LoG kernel.

    The raw kernel is divided by the mass of the sampled Gaussian (the same
    renormalization as ``make_gaussian_kernel``) and multiplied by
    ``-sigma^2`` so responses are comparable across scales.  ``sigma`` is a
    0-d tensor.  Bright tubes give positive responses.
    """
    h = size // 2
    x = torch.arange(-h, h + 1, dtype=sigma.dtype)
    r2 = x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2
    g = torch.exp(-r2 / (2.0 * sigma ** 2))
    k = (r2 - 2.0 * sigma ** 2) / sigma ** 4 * g
    return -(sigma ** 2) * (k - k.mean()) / g.sum()


def conv3d(grid: VoxelGrid, kernel) -> VoxelGrid:
    """Same-size cross-correlation with zero padding."""
    kernel = np.asarray(kernel, float)
    if kernel.ndim != 3 or any(n % 2 == 0 for n in kernel.shape):
        raise KernelError("kernel must be 3D with odd sizes")
    if any(k > n for k, n in zip(kernel.shape, grid.dims)):
        raise KernelError(f"kernel {kernel.shape} larger than grid {grid.dims}")
    return grid.with_data(ndimage.correlate(grid.data, kernel, mode="constant", cval=0.0))


def fft_correlate(x, kernels):
    """Zero-padded same-size correlation of ``x`` (B, 1, n, n, n) with ``kernels`` (S, k, k, k).

    Kernels may have different odd sizes; pass them as a list.  Returns (B, S, n, n, n).
    """
    dims = x.shape[-3:]
    kmax = max(k.shape[-1] for k in kernels)
    pad = kmax // 2
    shape = tuple(n + 2 * pad for n in dims)
    xp = torch.nn.functional.pad(x, (0, 2 * pad) * 3)
    X = torch.fft.rfftn(xp, s=shape, dim=(-3, -2, -1))
    stack = []
    for k in kernels:
        # embed centred in a kmax cube, flip for correlation
        o = (kmax - k.shape[-1]) // 2
        big = torch.nn.functional.pad(k, (o, o) * 3)
        stack.append(torch.flip(big, dims=(-3, -2, -1)))
    K = torch.fft.rfftn(torch.stack(stack), s=shape, dim=(-3, -2, -1))
    y = torch.fft.irfftn(X * K[None], s=shape, dim=(-3, -2, -1))
    return y[..., pad:pad + dims[0], pad:pad + dims[1], pad:pad + dims[2]]


def log_scale_responses(image: VoxelGrid, spec: LoGKernelSpec = LoGKernelSpec()):
    """Scale-normalized LoG responses, array of shape (S,) + dims."""
    x = torch.tensor(image.data)[None, None]
    ks = [log_kernel_t(size, torch.tensor(sigma, dtype=torch.float64)) for size, sigma in spec.scales]
    with torch.no_grad():
        return fft_correlate(x, ks)[0].numpy()


def best_scale_index(image: VoxelGrid, points_vox, spec: LoGKernelSpec = LoGKernelSpec()):
    """Scale index maximizing mean |response| over voxel indices ``points_vox`` (N, 3)."""
    resp = log_scale_responses(image, spec)
    p = np.asarray(points_vox, int)
    score = np.abs(resp[:, p[:, 0], p[:, 1], p[:, 2]]).mean(axis=1)
    return int(np.argmax(score)), score
