"""Smoothed-l0 sparse coding and sparse-representation image super-resolution."""

from .dictionary import (
    CoupledDictionary,
    TrainingConfig,
    load_dictionary,
    save_dictionary,
    train_coupled,
    validate_dictionary,
)
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    FormatError,
    InvariantViolation,
    SingularSystemError,
)
from .imaging import DegradationConfig, bicubic_resize, degrade, read_image, write_image
from .metrics import SsimConfig, psnr, ssim, ssim_map
from .sl0 import Sl0Config, SparseProblem, ista_l1_solve, sl0_solve
from .superres import SrConfig, SrReport, super_resolve

__version__ = "0.1.0"

__all__ = [
    "CoupledDictionary",
    "TrainingConfig",
    "load_dictionary",
    "save_dictionary",
    "train_coupled",
    "validate_dictionary",
    "ConfigurationError",
    "DegenerateDataError",
    "FormatError",
    "InvariantViolation",
    "SingularSystemError",
    "DegradationConfig",
    "bicubic_resize",
    "degrade",
    "read_image",
    "write_image",
    "SsimConfig",
    "psnr",
    "ssim",
    "ssim_map",
    "Sl0Config",
    "SparseProblem",
    "ista_l1_solve",
    "sl0_solve",
    "SrConfig",
    "SrReport",
    "super_resolve",
    "__version__",
]
