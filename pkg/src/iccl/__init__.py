"""Similarity, cross-entropy and ICCL losses with a desk-scale self-supervised harness."""

from .config import ConfigError, RunConfig, parse_config, parse_config_text
from .losses import (
    LossKind,
    LossResult,
    TemperatureConfig,
    ce_loss,
    effective_tau1,
    final_loss,
    grad_bound_report,
    iccl_loss,
    infonce_loss,
    mce_loss,
    prop1_inequality_check,
    similarity_loss,
    uniformity_kl,
)
from .train import RunReport, run_experiment, run_sweep

__all__ = [
    "ConfigError",
    "LossKind",
    "LossResult",
    "RunConfig",
    "RunReport",
    "TemperatureConfig",
    "ce_loss",
    "effective_tau1",
    "final_loss",
    "grad_bound_report",
    "iccl_loss",
    "infonce_loss",
    "mce_loss",
    "parse_config",
    "parse_config_text",
    "prop1_inequality_check",
    "run_experiment",
    "run_sweep",
    "similarity_loss",
    "uniformity_kl",
]
