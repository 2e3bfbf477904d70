import numpy as np

from ..models import ProjectionName, PruneConfig
from .base import BaseProjection, Mask, MaskedTensor, topn_mask_bits


class HardThreshold(BaseProjection):
    """Keeps the n largest magnitudes of every block verbatim."""

    def __init__(self, **kwargs):
        super().__init__(name=ProjectionName.HARD_THRESHOLD, **kwargs)

    @property
    def description(self) -> str:
        return "Zeroes all but the n largest-magnitude entries in each block of m."

    @property
    def continuous(self) -> bool:
        return False

    def mask(self, w: np.ndarray, cfg: PruneConfig) -> Mask:
        return Mask(topn_mask_bits(w, cfg), n=cfg.n, m=cfg.m)

    def project(self, w: np.ndarray, cfg: PruneConfig) -> MaskedTensor:
        mask = self.mask(w, cfg)
        return MaskedTensor(values=np.where(mask.bits, w, 0).astype(w.dtype, copy=False), mask=mask)
