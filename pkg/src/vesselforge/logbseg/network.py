"""Two-stream segmentation network: U-Net regular stream plus a Bayesian LoG stream."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..volume import VoxelGrid
from .bayes import BayesConv3d
from .kernels import DEFAULT_SCALES, LoGKernelSpec, fft_correlate, log_kernel_t


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    blocks: int = 2
    channels: int = 4
    scales: tuple = DEFAULT_SCALES
    learn_sigma: bool = True
    init_logvar: float = -6.0
    log_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.blocks <= 5:
            raise NetworkError("blocks must be between 1 and 5")
        if self.channels < 1:
            raise NetworkError("channels must be positive")
        LoGKernelSpec(tuple(tuple(s) for s in self.scales))

    def to_dict(self):
        d = asdict(self)
        d["scales"] = [list(s) for s in self.scales]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["scales"] = tuple(tuple(s) for s in d["scales"])
        return cls(**d)


def _double_conv(cin, cout):
    return nn.ModuleList([nn.Conv3d(cin, cout, 3, padding=1), nn.Conv3d(cout, cout, 3, padding=1)])


def _apply(pair, x):
    for conv in pair:
        x = F.relu(conv(x))
    return x


class SegNetwork(nn.Module):
    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        # initialization draws from a private stream, leaving the global RNG alone
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self._build(cfg)

    def _build(self, cfg):
        c, B = cfg.channels, cfg.blocks
        width = [c * 2 ** level for level in range(B + 1)]
        self.enc = nn.ModuleList([_double_conv(1 if l == 0 else width[l - 1], width[l]) for l in range(B)])
        self.bottom = _double_conv(width[B - 1], width[B])
        self.dec = nn.ModuleList([_double_conv(width[l + 1] + width[l], width[l]) for l in range(B)])

        spec = LoGKernelSpec(tuple(tuple(s) for s in cfg.scales))
        self.sizes = spec.sizes
        S = len(self.sizes)
        log_sigma = torch.log(torch.tensor(spec.sigmas))
        if cfg.learn_sigma:
            self.log_sigma = nn.Parameter(log_sigma)
        else:
            self.register_buffer("log_sigma", log_sigma)
        self.log_conv = BayesConv3d(S, S, 3, groups=S, init_logvar=cfg.init_logvar)
        if cfg.log_init:
            with torch.no_grad():
                for s, sigma in enumerate(spec.sigmas):
                    k = log_kernel_t(3, torch.tensor(sigma, dtype=torch.float64))
                    self.log_conv.weight_mu[s, 0] = k.to(self.log_conv.weight_mu.dtype)
        self.head = BayesConv3d(c + S, 1, 1, init_logvar=cfg.init_logvar)

    @property
    def n_scales(self):
        return len(self.sizes)

    def bayes_layers(self):
        return [self.log_conv, self.head]

    def kl(self):
        return sum(layer.kl() for layer in self.bayes_layers())

    def log_kernels(self):
        sig = torch.exp(self.log_sigma)
        return [log_kernel_t(size, sig[i]) for i, size in enumerate(self.sizes)]

    def log_stream(self, x, generator):
        resp = fft_correlate(x, [k.to(x.dtype) for k in self.log_kernels()])
        return F.relu(self.log_conv(resp, generator))

    def regular_stream(self, x):
        skips = []
        for block in self.enc:
            x = _apply(block, x)
            skips.append(x)
            x = F.max_pool3d(x, 2)
        x = _apply(self.bottom, x)
        for level in reversed(range(self.cfg.blocks)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = _apply(self.dec[level], torch.cat([x, skips[level]], dim=1))
        return x

    def logits(self, x, generator):
        if any(n % 2 ** self.cfg.blocks for n in x.shape[-3:]):
            raise NetworkError(f"input dims {tuple(x.shape[-3:])} not divisible by {2 ** self.cfg.blocks}")
        feats = torch.cat([self.regular_stream(x), self.log_stream(x, generator)], dim=1)
        return self.head(feats, generator)

    def forward(self, x, generator):
        return torch.sigmoid(self.logits(x, generator))


def make_generator(seed):
    return torch.Generator().manual_seed(int(seed))


def forward(net: SegNetwork, cube: VoxelGrid, seed: int) -> VoxelGrid:
    """One posterior sample of the probability map for a normalized cube."""
    dtype = next(net.parameters()).dtype
    x = torch.tensor(cube.data, dtype=dtype)[None, None]
    with torch.no_grad():
        z = net.logits(x, make_generator(seed))[0, 0].double()
    p = torch.sigmoid(z).numpy()
    # keep strictly inside (0, 1) even where float sigmoid saturates
    return cube.with_data(np.clip(p, 1e-12, 1.0 - 1e-12))
