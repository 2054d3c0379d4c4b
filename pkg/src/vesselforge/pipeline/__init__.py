"""Config-driven orchestration of phantom, training, segmentation, meshing, deformation and evaluation."""

from .config import STAGES, ConfigError, DependencyError, PipelineConfig, config_from_dict, parse_config
from .reports import emit_reports, render_figures
from .runner import AuditError, StageError, run_pipeline, sha256_file

__all__ = [
    "STAGES", "ConfigError", "DependencyError", "PipelineConfig", "config_from_dict", "parse_config",
    "emit_reports", "render_figures", "AuditError", "StageError", "run_pipeline", "sha256_file",
]
