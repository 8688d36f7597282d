"""Python bindings for the ecaformer low-light enhancement library."""

from ecaformer._core import (
    ConfigError,
    DimensionError,
    FormatError,
    IoError,
    Model,
    load_image,
    psnr,
    run_cli,
    save_image,
    ssim,
    synth_dataset,
    verify,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "IoError",
    "Model",
    "load_image",
    "psnr",
    "run_cli",
    "save_image",
    "ssim",
    "synth_dataset",
    "verify",
]
__version__ = "0.1.0"
