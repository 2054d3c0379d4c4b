"""Momentum optimization through the full RK2 flow."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import torch

from ..mesh.losses import MeshTopology
from .energy import DeformLossConfig, FieldSampler, total_loss_t
from .sampling import farthest_point_sample
from .shooting import FlowConfig, ShootingError, ShootingState, flow_t

HISTORY_FIELDS = ("epoch", "total", "misalign", "normal", "edge", "laplacian")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.05
    epochs: int = 300
    n_control: int = 200
    sigma: float | None = None  # None -> 5% of the bounding-box diagonal
    max_backtracks: int = 10


class DeformProblem:
    """Everything needed to evaluate the loss as a function of the momenta."""

    def __init__(self, mesh, field, gate=None, flow: FlowConfig = FlowConfig(),
                 loss_cfg: DeformLossConfig = DeformLossConfig(), control_idx=None, n_control=200,
                 sigma=None):
        self.mesh = mesh
        self.flow = flow
        self.loss_cfg = loss_cfg
        if control_idx is None:
            control_idx = farthest_point_sample(mesh.vertices, min(n_control, mesh.n_vertices))
        self.control_idx = np.asarray(control_idx, np.int64)
        self.sigma = float(sigma) if sigma is not None else 0.05 * mesh.bbox_diagonal()
        self.s0 = torch.tensor(mesh.vertices[self.control_idx])
        self.x0 = torch.tensor(mesh.vertices)
        self.topo = MeshTopology(mesh)
        self.sampler = FieldSampler(field)
        if gate is not None:
            self.alpha_x = torch.tensor(gate.alpha(mesh.vertices))
            self.mask_s = torch.tensor(gate.alpha(mesh.vertices[self.control_idx]) > 0, dtype=torch.float64)
        else:
            self.alpha_x = None
            self.mask_s = torch.ones(len(self.control_idx), dtype=torch.float64)

    def deform(self, xi):
        xi = xi * self.mask_s[:, None]
        _, _, x, _ = flow_t(self.s0, xi, self.sigma, self.flow, self.x0, self.alpha_x)
        if self.alpha_x is not None:
            # immobile vertices stay bit-exact
            x = torch.where((self.alpha_x == 0)[:, None], self.x0, x)
        return x

    def loss(self, xi):
        return total_loss_t(self.deform(xi), self.sampler, self.topo, self.loss_cfg)

    def state(self, xi):
        xi = (xi * self.mask_s[:, None]).detach().numpy()
        return ShootingState(self.s0.numpy(), xi, self.sigma)


def optimize_momenta(mesh, field, gate=None, flow: FlowConfig = FlowConfig(),
                     loss_cfg: DeformLossConfig = DeformLossConfig(), opt: OptimConfig = OptimConfig(),
                     seed=0, control_idx=None, log=None, init_momenta=None):
    """Adam on the control-point momenta, starting from zero or ``init_momenta``.

    The returned mesh and state are those with the lowest total loss seen, so
    the result never scores worse than the initial mesh.  A non-finite loss
    reverts the step and halves the learning rate.
    """
    torch.manual_seed(seed)
    prob = DeformProblem(mesh, field, gate, flow, loss_cfg, control_idx, opt.n_control, opt.sigma)
    n = len(prob.control_idx)
    if init_momenta is None:
        xi = torch.zeros((n, 3), dtype=torch.float64, requires_grad=True)
    else:
        init = np.asarray(init_momenta, float)
        if init.shape != (n, 3):
            raise ShootingError(f"initial momenta must have shape ({n}, 3), got {init.shape}")
        xi = torch.tensor(init, requires_grad=True)
    adam = torch.optim.Adam([xi], lr=opt.lr)
    history = []
    best = None
    lr = opt.lr
    backtracks = 0
    for epoch in range(opt.epochs + 1):
        total, terms = prob.loss(xi)
        if not torch.isfinite(total):
            if best is None or backtracks >= opt.max_backtracks:
                raise ShootingError(f"non-finite deformation loss at epoch {epoch}")
            backtracks += 1
            lr *= 0.5
            with torch.no_grad():
                xi.copy_(best[1])
            for group in adam.param_groups:
                group["lr"] = lr
            continue
        value = float(total.detach())
        if best is None or value < best[0]:
            best = (value, xi.detach().clone())
        if epoch == opt.epochs:
            break
        row = {"epoch": epoch, "total": value, **{k: float(v.detach()) for k, v in terms.items()}}
        history.append(row)
        if log is not None:
            log(row)
        adam.zero_grad()
        total.backward()
        adam.step()
    xi_best = best[1]
    with torch.no_grad():
        x = prob.deform(xi_best).numpy()
    return mesh.with_vertices(x), prob.state(xi_best), history


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def write_state_json(state: ShootingState, path, gate=None):
    doc = state.to_dict()
    if gate is not None:
        doc["gate"] = gate.to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
