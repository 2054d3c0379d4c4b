"""Control-point geodesic shooting with a Gaussian kernel and midpoint RK2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class ShootingError(ValueError):
    pass


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.tensor(np.asarray(x, float), dtype=torch.float64)


@dataclass(frozen=True, eq=False)
class ShootingState:
    control_points: np.ndarray
    momenta: np.ndarray
    sigma: float

    def __post_init__(self):
        s = np.asarray(self.control_points, float).reshape(-1, 3)
        m = np.asarray(self.momenta, float).reshape(-1, 3)
        if len(s) < 1:
            raise ShootingError("need at least one control point")
        if s.shape != m.shape:
            raise ShootingError("control points and momenta differ in shape")
        if not self.sigma > 0:
            raise ShootingError("kernel width must be positive")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(m))):
            raise ShootingError("state must be finite")
        object.__setattr__(self, "control_points", s)
        object.__setattr__(self, "momenta", m)
        object.__setattr__(self, "sigma", float(self.sigma))

    def to_dict(self):
        return {
            "sigma": self.sigma,
            "control_points": self.control_points.tolist(),
            "momenta": self.momenta.tolist(),
        }


@dataclass(frozen=True)
class FlowConfig:
    T: float = 1.0
    steps: int = 15
    integrator: str = "rk2"

    def __post_init__(self):
        if self.steps < 1:
            raise ShootingError("steps must be at least 1")
        if self.integrator != "rk2":
            raise ShootingError("only the midpoint RK2 integrator is provided")


def gauss_kernel(x, y, sigma):
    d = np.asarray(x, float) - np.asarray(y, float)
    return float(np.exp(-(d @ d) / sigma ** 2))


def kernel_matrix_t(x, y, sigma):
    # |x|^2 + |y|^2 - 2 x.y avoids an (n, m, 3) intermediate
    d2 = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T)
    d2 = torch.clamp(d2, min=0.0)
    if x is y:
        # exact zero self-distance keeps a unit diagonal
        d2 = d2 * (1.0 - torch.eye(len(x), dtype=d2.dtype))
    return torch.exp(-d2 / sigma ** 2)


def kernel_matrix(s, sigma, y=None):
    s = _t(s)
    y = s if y is None else _t(y)
    return kernel_matrix_t(s, y, sigma).numpy()


def velocity_t(x, s, xi, sigma):
    return kernel_matrix_t(x, s, sigma) @ xi


def velocity_at(points, state: ShootingState):
    x = _t(np.atleast_2d(points))
    return velocity_t(x, _t(state.control_points), _t(state.momenta), state.sigma).numpy()


def rhs_t(s, xi, sigma):
    K = kernel_matrix_t(s, s, sigma)
    ds = K @ xi
    # dxi_i = (2 / sigma^2) sum_k (xi_i . xi_k) K_ik (s_i - s_k)
    w = (xi @ xi.T) * K
    dxi = (2.0 / sigma ** 2) * (w.sum(1, keepdim=True) * s - w @ s)
    return ds, dxi


def hamiltonian_rhs(state: ShootingState):
    ds, dxi = rhs_t(_t(state.control_points), _t(state.momenta), state.sigma)
    return ds.numpy(), dxi.numpy()


def hamiltonian_t(s, xi, sigma):
    return 0.5 * (xi * (kernel_matrix_t(s, s, sigma) @ xi)).sum()


def hamiltonian(state: ShootingState):
    return float(hamiltonian_t(_t(state.control_points), _t(state.momenta), state.sigma))


def flow_t(s, xi, sigma, flow: FlowConfig, x=None, alpha_x=None, keep=False):
    """Integrate controls (and optional vertices ``x`` scaled by ``alpha_x``) by midpoint RK2."""
    dt = flow.T / flow.steps
    traj = [(s, xi)] if keep else None

    def f(s_, xi_, x_):
        ds, dxi = rhs_t(s_, xi_, sigma)
        dx = None
        if x_ is not None:
            dx = velocity_t(x_, s_, xi_, sigma)
            if alpha_x is not None:
                dx = alpha_x[:, None] * dx
        return ds, dxi, dx

    for _ in range(flow.steps):
        ds, dxi, dx = f(s, xi, x)
        sh, xih = s + 0.5 * dt * ds, xi + 0.5 * dt * dxi
        xh = None if x is None else x + 0.5 * dt * dx
        ds, dxi, dx = f(sh, xih, xh)
        s, xi = s + dt * ds, xi + dt * dxi
        if x is not None:
            x = x + dt * dx
        if keep:
            traj.append((s, xi))
    return s, xi, x, traj


def shoot(state: ShootingState, flow: FlowConfig = FlowConfig()):
    """Endpoint ``(s(T), xi(T))`` of the control system alone."""
    s, xi, _, _ = flow_t(_t(state.control_points), _t(state.momenta), state.sigma, flow)
    return s.numpy(), xi.numpy()


def shoot_and_advect(mesh, state: ShootingState, gate=None, flow: FlowConfig = FlowConfig()):
    """Deform ``mesh`` along the geodesic generated by ``state``.

    With a gate, momenta of control points where alpha is zero are cleared and
    each vertex velocity is scaled by alpha at the vertex's initial position.
    Returns the deformed mesh and the control trajectory as a list of
    ``(s, xi)`` numpy pairs, one per step including the start.
    """
    s0 = _t(state.control_points)
    xi0 = _t(state.momenta)
    x0 = _t(mesh.vertices)
    alpha_x = None
    if gate is not None:
        a_s = _t(gate.alpha(state.control_points))
        xi0 = xi0 * (a_s > 0)[:, None]
        alpha_x = _t(gate.alpha(mesh.vertices))
    with torch.no_grad():
        s, xi, x, traj = flow_t(s0, xi0, state.sigma, flow, x0, alpha_x, keep=True)
    if not (torch.isfinite(x).all() and torch.isfinite(s).all()):
        raise ShootingError("non-finite state during integration")
    x = x.numpy()
    if alpha_x is not None:
        frozen = alpha_x.numpy() == 0
        x[frozen] = mesh.vertices[frozen]
    return mesh.with_vertices(x), [(a.numpy(), b.numpy()) for a, b in traj]
