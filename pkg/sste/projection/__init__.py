"""
N:M pruning functions.

Hard thresholding keeps the n largest magnitudes per block of m; soft
thresholding shrinks them by a block threshold so that the map is
continuous. Blocks are contiguous along the last axis.
"""

from typing import Dict

import numpy as np

from ..exceptions import ShapeError
from ..models import ProjectionName, PruneConfig
from .base import BaseProjection, Mask, MaskedTensor, as_blocks
from .hard import HardThreshold
from .soft import SoftThreshold, block_threshold

_HARD = HardThreshold()
_SOFT = SoftThreshold()

PROJECTIONS: Dict[ProjectionName, BaseProjection] = {
    ProjectionName.HARD_THRESHOLD: _HARD,
    ProjectionName.SOFT_THRESHOLD: _SOFT,
}


def get_projection(name: str) -> BaseProjection:
    """Look up a registered projection by name."""
    return PROJECTIONS[ProjectionName(name)]


def hard_threshold(w: np.ndarray, cfg: PruneConfig) -> MaskedTensor:
    return _HARD(w, cfg)


def soft_threshold(w: np.ndarray, cfg: PruneConfig) -> MaskedTensor:
    return _SOFT(w, cfg)


def mask_of(w: np.ndarray, cfg: PruneConfig) -> Mask:
    """Support mask of hard_threshold(w)."""
    return _HARD(w, cfg).mask


def flip_rate(prev: Mask, curr: Mask) -> float:
    """Fraction of positions whose mask bit differs."""
    if prev.shape != curr.shape:
        raise ShapeError(f"cannot compare masks of shape {prev.shape} and {curr.shape}")
    if prev.bits.size == 0:
        return 0.0
    return float(np.count_nonzero(prev.bits ^ curr.bits)) / prev.bits.size


def flip_count(prev: Mask, curr: Mask) -> int:
    if prev.shape != curr.shape:
        raise ShapeError(f"cannot compare masks of shape {prev.shape} and {curr.shape}")
    return int(np.count_nonzero(prev.bits ^ curr.bits))


def is_nm_valid(w: np.ndarray, cfg: PruneConfig) -> bool:
    """True when every block of ``w`` has at most n nonzeros."""
    return bool((np.count_nonzero(as_blocks(w, cfg.m), axis=1) <= cfg.n).all())


__all__ = [
    "BaseProjection",
    "HardThreshold",
    "SoftThreshold",
    "Mask",
    "MaskedTensor",
    "PROJECTIONS",
    "get_projection",
    "hard_threshold",
    "soft_threshold",
    "mask_of",
    "flip_rate",
    "flip_count",
    "is_nm_valid",
    "block_threshold",
]
