"""Toy-scale LoG-filtered Bayesian segmentation network."""

from .bayes import BayesConv3d, BayesError, kl_gaussian, sample_weights
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gate import BalancedGate, GateImbalanceError, assemble_balanced_batch, gate_response, voxel_percentage
from .inference import Ensemble, InferenceError, predict_ensemble, predict_samples, stitch_tiles
from .kernels import (
    DEFAULT_SCALES, KernelError, LoGKernelSpec, best_scale_index, conv3d, log_scale_responses,
    make_gaussian_kernel, make_log_kernel,
)
from .losses import bernoulli_nll, dice_coefficient, dice_loss, objective
from .network import NetConfig, NetworkError, SegNetwork, forward
from .training import TrainConfig, TrainingError, train, write_loss_csv

__all__ = [
    "BayesConv3d", "BayesError", "kl_gaussian", "sample_weights", "CheckpointError",
    "load_checkpoint", "save_checkpoint", "BalancedGate", "GateImbalanceError",
    "assemble_balanced_batch", "gate_response", "voxel_percentage", "Ensemble", "InferenceError",
    "predict_ensemble", "predict_samples", "stitch_tiles", "DEFAULT_SCALES", "KernelError",
    "LoGKernelSpec", "best_scale_index", "conv3d", "log_scale_responses", "make_gaussian_kernel",
    "make_log_kernel", "bernoulli_nll", "dice_coefficient", "dice_loss", "objective", "NetConfig",
    "NetworkError", "SegNetwork", "forward", "TrainConfig", "TrainingError", "train", "write_loss_csv",
]
