"""Balanced-batch training with Adam on Dice + negative ELBO."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from ..volume import PreprocessConfig, clip_normalize, random_crop_augment
from .gate import BalancedGate, GateImbalanceError, balanced_indices, gate_response, voxel_percentage
from .losses import objective
from .network import SegNetwork, make_generator


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 10
    beta: float | None = None  # None -> 1 / voxels per batch
    seed: int = 0
    crop: tuple = (32, 32, 32)
    pool_size: int = 24
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise TrainingError("learning rate must be positive")
        if self.epochs < 1:
            raise TrainingError("epochs must be at least 1")
        if self.batch_size < 2:
            raise TrainingError("batch size must be at least 2")

    def kl_weight(self):
        if self.beta is not None:
            return float(self.beta)
        return 1.0 / (self.batch_size * int(np.prod(self.crop)))


HISTORY_FIELDS = ("epoch", "total", "dice", "nll", "kl")


def _draw_pool(volumes, n, crop_cfg, rng):
    pool = []
    for _ in range(n):
        img, lab = volumes[int(rng.integers(len(volumes)))]
        c, l = random_crop_augment(img, lab, crop_cfg, seed=int(rng.integers(2 ** 31)))
        pool.append((np.ascontiguousarray(c.data), np.ascontiguousarray(l.data)))
    cubes = torch.tensor(np.stack([p[0] for p in pool]))[:, None]
    vps = np.array([voxel_percentage(r) for r in gate_response(cubes)])
    return pool, vps


def train(net: SegNetwork, dataset, cfg: TrainConfig = TrainConfig(), gate: BalancedGate = BalancedGate(),
          preprocess: PreprocessConfig = PreprocessConfig(), log=None):
    """Train ``net`` in place on ``dataset`` (a list of raw ``(image, label)`` grids).

    One epoch is one balanced batch drawn from a fresh pool of random crops.
    Returns ``(net, history)`` where history rows are dicts keyed by
    ``HISTORY_FIELDS``.
    """
    if len(dataset) < 4:
        raise TrainingError("training needs at least 4 volumes")
    if cfg.batch_size != gate.batch_size:
        raise TrainingError("train batch size must match the gate batch size")
    volumes = [(clip_normalize(img, preprocess), lab) for img, lab in dataset]
    crop_cfg = PreprocessConfig(
        preprocess.clip_lo, preprocess.clip_hi, preprocess.resample_factor, cfg.crop,
        preprocess.flip_axes, preprocess.rotate90, preprocess.seed,
    )
    rng = np.random.default_rng(cfg.seed)
    gen = make_generator(cfg.seed)
    dtype = next(net.parameters()).dtype
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    beta = cfg.kl_weight()
    history = []
    net.train()
    for epoch in range(cfg.epochs):
        pool, vps = _draw_pool(volumes, cfg.pool_size, crop_cfg, rng)
        for _ in range(3):
            if gate.is_large(vps).any() and (~gate.is_large(vps)).any():
                break
            more, more_vp = _draw_pool(volumes, cfg.pool_size, crop_cfg, rng)
            pool, vps = pool + more, np.concatenate([vps, more_vp])
        try:
            idx = balanced_indices(vps, gate, rng)
        except GateImbalanceError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        x = torch.tensor(np.stack([pool[i][0] for i in idx]), dtype=dtype)[:, None]
        y = torch.tensor(np.stack([pool[i][1] for i in idx]), dtype=dtype)[:, None]
        pred = net(x, gen)
        total, d, nll, kl = objective(pred, y, net, beta)
        if not torch.isfinite(total):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        opt.zero_grad()
        total.backward()
        opt.step()
        row = dict(epoch=epoch, **{k: float(v.detach()) for k, v in zip(HISTORY_FIELDS[1:], (total, d, nll, kl))})
        history.append(row)
        if log is not None:
            log(row)
    net.eval()
    return net, history


def write_loss_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
