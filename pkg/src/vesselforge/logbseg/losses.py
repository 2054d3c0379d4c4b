"""Dice loss and the Dice + negative-ELBO training objective."""

from __future__ import annotations

import numpy as np
import torch

NLL_CLAMP = 1e-7


class LossError(ValueError):
    pass


def _arrays(pred, label):
    if hasattr(pred, "data") and hasattr(pred, "same_geometry"):
        if not pred.same_geometry(label):
            raise LossError("prediction and label geometry differ")
        return pred.data, label.data
    if tuple(pred.shape) != tuple(label.shape):
        raise LossError(f"shape mismatch {tuple(pred.shape)} vs {tuple(label.shape)}")
    return pred, label


def dice_coefficient(pred, label):
    """2 sum(g o) / (sum g^2 + sum o^2); empty against empty counts as 1."""
    o, g = _arrays(pred, label)
    if isinstance(o, torch.Tensor):
        den = (g * g).sum() + (o * o).sum()
        if float(den.detach()) == 0.0:
            return torch.ones((), dtype=o.dtype)
        return 2.0 * (g * o).sum() / den
    o, g = np.asarray(o, float), np.asarray(g, float)
    den = (g * g).sum() + (o * o).sum()
    return 1.0 if den == 0 else float(2.0 * (g * o).sum() / den)


def dice_loss(pred, label):
    return 1.0 - dice_coefficient(pred, label)


def bernoulli_nll(pred, label):
    """Mean per-voxel Bernoulli negative log-likelihood, probabilities clamped."""
    p = pred.clamp(NLL_CLAMP, 1.0 - NLL_CLAMP)
    return -(label * torch.log(p) + (1.0 - label) * torch.log1p(-p)).mean()


def objective(pred, label, net, beta):
    """Return ``(total, dice, nll, kl)`` tensors with ``total = dice + nll + kl``.

    The KL term is already multiplied by ``beta``.
    """
    pred, label = _arrays(pred, label)
    d = dice_loss(pred, label)
    nll = bernoulli_nll(pred, label)
    kl = beta * net.kl() if beta else torch.zeros((), dtype=pred.dtype)
    return d + nll + kl, d, nll, kl
