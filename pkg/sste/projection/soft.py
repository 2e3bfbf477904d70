import numpy as np

from ..models import ProjectionName, PruneConfig
from .base import BaseProjection, Mask, MaskedTensor, as_blocks, topn_mask_bits


def block_threshold(w: np.ndarray, cfg: PruneConfig) -> np.ndarray:
    """Per-block threshold t = (1-γ)|t_(m-n)| + γ|t_(m-n+1)| over ascending magnitudes."""
    mags = np.sort(np.abs(as_blocks(w, cfg.m)), axis=1)
    below = mags[:, cfg.m - cfg.n - 1]
    above = mags[:, cfg.m - cfg.n]
    if cfg.gamma == 0.0:
        return below
    if cfg.gamma == 1.0:
        return above
    return (1.0 - cfg.gamma) * below + cfg.gamma * above


def shrink(w: np.ndarray, threshold: np.ndarray, m: int) -> np.ndarray:
    """sign(w) * max(|w| - t, 0) with one threshold per block of m."""
    blocks = as_blocks(w, m)
    out = np.sign(blocks) * np.maximum(np.abs(blocks) - threshold[:, None], 0.0)
    return out.reshape(np.shape(w))


class SoftThreshold(BaseProjection):
    """Shrinks the n largest magnitudes of every block by a shared threshold.

    The map is continuous: with γ-interpolated thresholds every output entry
    moves by at most twice the sup-norm change of its block.
    """

    def __init__(self, **kwargs):
        super().__init__(name=ProjectionName.SOFT_THRESHOLD, **kwargs)

    @property
    def description(self) -> str:
        return "Soft-thresholds each block of m by the (m-n)-th magnitude, leaving at most n nonzeros."

    @property
    def continuous(self) -> bool:
        return True

    def project(self, w: np.ndarray, cfg: PruneConfig) -> MaskedTensor:
        if not np.issubdtype(w.dtype, np.floating):
            w = w.astype(np.float64)
        values = shrink(w, block_threshold(w, cfg), cfg.m).astype(w.dtype, copy=False)
        return MaskedTensor(values=values, mask=Mask(topn_mask_bits(w, cfg), n=cfg.n, m=cfg.m))
