"""Control-point geodesic shooting for unsupervised surface refinement."""

from .cheb import ChebError, ChebPredictorConfig, cheb_predict_momenta, init_cheb_weights
from .energy import DeformLossConfig, misalignment_energy, total_loss
from .gate import ScalingGate, scaling_field
from .optimize import OptimConfig, optimize_momenta, write_history_csv, write_state_json
from .sampling import farthest_point_sample
from .shooting import (
    FlowConfig, ShootingError, ShootingState, gauss_kernel, hamiltonian, hamiltonian_rhs,
    kernel_matrix, shoot, shoot_and_advect, velocity_at,
)

__all__ = [
    "ChebError", "ChebPredictorConfig", "cheb_predict_momenta", "init_cheb_weights",
    "DeformLossConfig", "misalignment_energy", "total_loss", "ScalingGate", "scaling_field",
    "OptimConfig", "optimize_momenta", "write_history_csv", "write_state_json",
    "farthest_point_sample", "FlowConfig", "ShootingError", "ShootingState", "gauss_kernel",
    "hamiltonian", "hamiltonian_rhs", "kernel_matrix", "shoot", "shoot_and_advect", "velocity_at",
]
