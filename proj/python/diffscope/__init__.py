"""Python access to the diffscope library: toy data, metrics, strategies, trained models and experiments."""

from ._core import (
    IoError,
    Model,
    builtin_strategy,
    class_name,
    gen_data,
    psnr,
    run_experiment,
    ssim,
    strategy_cost,
    to_unit_range,
    toy_images,
    train,
    validate_strategy,
    verify_manifest,
    write_report,
)

__all__ = [
    "IoError",
    "Model",
    "builtin_strategy",
    "class_name",
    "gen_data",
    "psnr",
    "run_experiment",
    "ssim",
    "strategy_cost",
    "to_unit_range",
    "toy_images",
    "train",
    "validate_strategy",
    "verify_manifest",
    "write_report",
]
