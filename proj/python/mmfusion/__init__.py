"""Multimodal factorized bilinear fusion for video classification."""

from ._core import (
    ConfigError,
    Error,
    FormatError,
    NumericError,
    ShapeError,
    avgpool,
    bce_loss,
    bilinear_full,
    evaluate_checkpoint,
    gap_at_k,
    generate_synthetic,
    gradcheck,
    mfb_core,
    mfb_forward,
    moe_forward,
    netvlad,
    netvlad_assign,
    read_dataset,
    run_cli,
    write_synthetic,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "NumericError",
    "ShapeError",
    "avgpool",
    "bce_loss",
    "bilinear_full",
    "evaluate_checkpoint",
    "gap_at_k",
    "generate_synthetic",
    "gradcheck",
    "mfb_core",
    "mfb_forward",
    "moe_forward",
    "netvlad",
    "netvlad_assign",
    "read_dataset",
    "run_cli",
    "write_synthetic",
]
