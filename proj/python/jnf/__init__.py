"""Two-stage multimodal VAE with flow-based unimodal posteriors."""

from ._core import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    PipelineOrderError,
    canonical_correlations,
    config_defaults,
    config_text,
    evaluate,
    file_sha256,
    frechet_distance,
    gen_data,
    generate_dataset,
    hmc_gaussian_product,
    infonce_loss,
    kl_diag_gaussians,
    load_checkpoint,
    sample,
    train_flows,
    train_joint,
    train_projectors,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractViolation",
    "PipelineOrderError",
    "canonical_correlations",
    "config_defaults",
    "config_text",
    "evaluate",
    "file_sha256",
    "frechet_distance",
    "gen_data",
    "generate_dataset",
    "hmc_gaussian_product",
    "infonce_loss",
    "kl_diag_gaussians",
    "load_checkpoint",
    "sample",
    "train_flows",
    "train_joint",
    "train_projectors",
]
