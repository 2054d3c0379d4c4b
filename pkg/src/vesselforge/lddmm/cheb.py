"""Chebyshev spectral graph-convolution predictor for initial momenta.

An optional amortized parameterization: the network maps vertex coordinates
to a per-vertex 3-vector field and the momenta are read at the control
vertices.  Weights are plain numpy arrays; no training loop is provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class ChebError(ValueError):
    pass


@dataclass(frozen=True)
class ChebPredictorConfig:
    k_cheb: int = 3
    hidden: int = 16
    activation: str = "relu"  # "relu" or "none"
    seed: int = 0

    def __post_init__(self):
        if self.k_cheb < 1:
            raise ChebError("k_cheb must be at least 1")
        if self.hidden < 1:
            raise ChebError("hidden width must be at least 1")
        if self.activation not in ("relu", "none"):
            raise ChebError(f"unknown activation {self.activation!r}")


def scaled_laplacian(mesh):
    """L_norm - I with L_norm = I - D^-1/2 A D^-1/2 (lambda_max taken as 2)."""
    e = mesh.edges
    n = mesh.n_vertices
    a = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    a = ((a + a.T) > 0).astype(float).tocsr()
    n_comp, _ = connected_components(a, directed=False)
    if n_comp != 1:
        raise ChebError(f"mesh graph has {n_comp} connected components")
    d = np.asarray(a.sum(axis=1)).ravel()
    dinv = sparse.diags(1.0 / np.sqrt(d))
    return (-(dinv @ a @ dinv)).tocsr()


def cheb_conv(lt, x, w, b):
    """sum_k T_k(L~) x W_k + b, with ``w`` of shape (K, c_in, c_out)."""
    t_prev, t = None, x
    out = t @ w[0]
    for k in range(1, len(w)):
        t_next = lt @ t if k == 1 else 2.0 * (lt @ t) - t_prev
        t_prev, t = t, t_next
        out = out + t @ w[k]
    return out + b


def _layer_shapes(cfg: ChebPredictorConfig):
    h, k = cfg.hidden, cfg.k_cheb
    shapes = {"in.w": (1, 3, h), "in.b": (h,)}
    for blk in range(2):
        for j in range(2):
            shapes[f"block{blk}.conv{j}.w"] = (k, h, h)
            shapes[f"block{blk}.conv{j}.b"] = (h,)
    shapes["out.w"] = (1, h, 3)
    shapes["out.b"] = (3,)
    return shapes


def init_cheb_weights(cfg: ChebPredictorConfig, scale=1.0):
    """Glorot-style random weights, zero biases, drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    out = {}
    for name, shape in _layer_shapes(cfg).items():
        if name.endswith(".b"):
            out[name] = np.zeros(shape)
        else:
            fan = shape[0] * shape[1] + shape[2]
            out[name] = scale * rng.normal(0.0, np.sqrt(2.0 / fan), shape)
    return out


def zero_cheb_weights(cfg: ChebPredictorConfig):
    return {name: np.zeros(shape) for name, shape in _layer_shapes(cfg).items()}


def cheb_vertex_field(mesh, cfg: ChebPredictorConfig, weights):
    """Per-vertex 3-vector output of the predictor."""
    shapes = _layer_shapes(cfg)
    for name, shape in shapes.items():
        if name not in weights:
            raise ChebError(f"missing weight {name}")
        if np.shape(weights[name]) != shape:
            raise ChebError(f"weight {name} has shape {np.shape(weights[name])}, expected {shape}")
    act = (lambda z: np.maximum(z, 0.0)) if cfg.activation == "relu" else (lambda z: z)
    lt = scaled_laplacian(mesh)
    h = cheb_conv(lt, mesh.vertices, weights["in.w"], weights["in.b"])
    for blk in range(2):
        z = act(cheb_conv(lt, h, weights[f"block{blk}.conv0.w"], weights[f"block{blk}.conv0.b"]))
        z = cheb_conv(lt, z, weights[f"block{blk}.conv1.w"], weights[f"block{blk}.conv1.b"])
        h = act(h + z)
    return cheb_conv(lt, h, weights["out.w"], weights["out.b"])


def cheb_predict_momenta(mesh, cfg: ChebPredictorConfig, weights, control_idx):
    """Momenta at ``control_idx`` read from the predicted vertex field."""
    field = cheb_vertex_field(mesh, cfg, weights)
    return field[np.asarray(control_idx, np.int64)]
