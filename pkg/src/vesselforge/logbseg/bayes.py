"""Mean-field Gaussian weights with a standard-normal prior."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class BayesError(ValueError):
    pass


def sample_weights(mu, logvar, generator=None, eps=None):
    """Reparameterized draw ``mu + exp(logvar / 2) * eps``.

    ``generator`` is a ``torch.Generator`` (or an int seed); ``eps`` overrides
    the noise entirely.
    """
    if eps is None:
        if isinstance(generator, int):
            generator = torch.Generator().manual_seed(generator)
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * logvar) * eps


def kl_gaussian(mu, var):
    """Sum of KL(N(mu, var) || N(0, 1)) over all entries."""
    if isinstance(mu, torch.Tensor) or isinstance(var, torch.Tensor):
        var = torch.as_tensor(var)
        if bool((var <= 0).any()):
            raise BayesError("variance must be positive")
        return 0.5 * (mu ** 2 + var - 1.0 - torch.log(var)).sum()
    mu = np.asarray(mu, float)
    var = np.asarray(var, float)
    if np.any(var <= 0):
        raise BayesError("variance must be positive")
    return float(0.5 * np.sum(mu ** 2 + var - 1.0 - np.log(var)))


def kl_from_logvar(mu, logvar):
    return 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar).sum()


class BayesConv3d(nn.Module):
    """3D convolution whose weights and bias are Gaussian random variables."""

    def __init__(self, in_ch, out_ch, kernel_size, groups=1, init_logvar=-6.0):
        super().__init__()
        fan_in = in_ch // groups * kernel_size ** 3
        bound = 1.0 / math.sqrt(fan_in)
        shape = (out_ch, in_ch // groups) + (kernel_size,) * 3
        self.weight_mu = nn.Parameter(torch.empty(shape).uniform_(-bound, bound))
        self.weight_logvar = nn.Parameter(torch.full(shape, float(init_logvar)))
        self.bias_mu = nn.Parameter(torch.zeros(out_ch))
        self.bias_logvar = nn.Parameter(torch.full((out_ch,), float(init_logvar)))
        self.groups = groups
        self.padding = kernel_size // 2

    def forward(self, x, generator):
        w = sample_weights(self.weight_mu, self.weight_logvar, generator)
        b = sample_weights(self.bias_mu, self.bias_logvar, generator)
        return F.conv3d(x, w, b, padding=self.padding, groups=self.groups)

    def kl(self):
        return kl_from_logvar(self.weight_mu, self.weight_logvar) + kl_from_logvar(self.bias_mu, self.bias_logvar)
