"""
sste: N:M sparse pre-training with straight-through estimators.

Hard-threshold, SR-STE and soft-threshold (S-STE) weight paths for small
networks, MVUE gradient sparsification, FP8 emulation and training-dynamics
diagnostics.
"""
from .config import ExperimentConfig
from .diagnostics import aod, delta_f1_f2, ecdf, predicted_aod
from .exceptions import (
    BackwardBeforeForwardError,
    ConfigError,
    MatrixError,
    NonFiniteError,
    ShapeError,
    SparsityViolationError,
    SSTEError,
)
from .experiments import run_ablation_matrix, run_toy, run_training
from .lowprec import FORMATS, FloatFormat, compute_scale, dequantize, fp8_cast, quantize
from .models import LayerMode, PruneConfig, RescaleRecipe, RunRecord, StepTrace
from .mvue import RngStream, mvue_block, mvue_tensor
from .projection import Mask, MaskedTensor, flip_rate, hard_threshold, mask_of, soft_threshold
from .rescaling import ScaleRegistry, beta_keep_l1, beta_min_mse, get_or_freeze

__version__ = "0.1.0"

__all__ = [
    "BackwardBeforeForwardError",
    "ConfigError",
    "ExperimentConfig",
    "FORMATS",
    "FloatFormat",
    "LayerMode",
    "Mask",
    "MaskedTensor",
    "MatrixError",
    "NonFiniteError",
    "PruneConfig",
    "RescaleRecipe",
    "RngStream",
    "RunRecord",
    "SSTEError",
    "ScaleRegistry",
    "ShapeError",
    "SparsityViolationError",
    "StepTrace",
    "aod",
    "beta_keep_l1",
    "beta_min_mse",
    "compute_scale",
    "delta_f1_f2",
    "dequantize",
    "ecdf",
    "flip_rate",
    "fp8_cast",
    "get_or_freeze",
    "hard_threshold",
    "mask_of",
    "mvue_block",
    "mvue_tensor",
    "predicted_aod",
    "quantize",
    "run_ablation_matrix",
    "run_toy",
    "run_training",
    "soft_threshold",
]
