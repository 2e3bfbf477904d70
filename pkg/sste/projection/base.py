import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from ..exceptions import NonFiniteError, ShapeError
from ..models import ProjectionName, PruneConfig


def as_blocks(w: np.ndarray, m: int) -> np.ndarray:
    """View ``w`` as rows of ``m`` contiguous entries along its last axis.

    Raises:
        ShapeError: if the last axis is not divisible by ``m``.
    """
    w = np.asarray(w)
    if w.ndim == 0 or w.shape[-1] % m != 0:
        raise ShapeError(f"last axis of shape {w.shape} is not divisible by block size {m}")
    return w.reshape(-1, m)


def check_finite(w: np.ndarray) -> None:
    if np.isnan(w).any():
        raise NonFiniteError("projection input contains NaN")


@dataclass(frozen=True)
class Mask:
    """0/1 indicator with the N:M block layout of its tensor."""
    bits: np.ndarray
    n: int = 2
    m: int = 4

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        per_block = as_blocks(bits, self.m).sum(axis=1)
        if (per_block > self.n).any():
            raise ShapeError(f"mask has a block with more than {self.n} of {self.m} entries set")
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self) -> tuple:
        return self.bits.shape

    @property
    def complement(self) -> np.ndarray:
        return ~self.bits

    def per_block(self) -> np.ndarray:
        return as_blocks(self.bits, self.m).sum(axis=1)

    def digest(self) -> str:
        """64-bit hash of the packed bits."""
        packed = np.packbits(self.bits.ravel())
        return hashlib.blake2b(packed.tobytes(), digest_size=8).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class MaskedTensor:
    """Dense values plus a Mask; values vanish wherever the mask is 0."""
    values: np.ndarray
    mask: Mask

    def __post_init__(self) -> None:
        if self.values.shape != self.mask.shape:
            raise ShapeError(f"values {self.values.shape} and mask {self.mask.shape} differ")
        if np.any(self.values[~self.mask.bits] != 0):
            raise ShapeError("masked tensor has nonzero values outside its mask")

    def nnz_per_block(self) -> np.ndarray:
        return np.count_nonzero(as_blocks(self.values, self.mask.m), axis=1)


def topn_mask_bits(w: np.ndarray, cfg: PruneConfig) -> np.ndarray:
    """Bits of the n largest magnitudes per block; equal magnitudes keep the lowest index."""
    blocks = as_blocks(w, cfg.m)
    order = np.argsort(-np.abs(blocks), axis=1, kind="stable")
    bits = np.zeros(blocks.shape, dtype=bool)
    np.put_along_axis(bits, order[:, : cfg.n], True, axis=1)
    return bits.reshape(np.shape(w))


class BaseProjection(ABC):
    """Base class for all N:M pruning functions."""

    def __init__(self, name: ProjectionName, **kwargs: Any):
        """Initialize the projection with a name and optional metadata.

        Args:
            name: The name of the projection
            **kwargs: Additional configuration recorded in the metadata
        """
        self.name = name
        self.config = kwargs

    @property
    @abstractmethod
    def description(self) -> str:
        """Return a brief description of what the projection does."""
        pass

    @property
    @abstractmethod
    def continuous(self) -> bool:
        """Whether the map is continuous in its input."""
        pass

    @abstractmethod
    def project(self, w: np.ndarray, cfg: PruneConfig) -> MaskedTensor:
        """Project a dense tensor onto the N:M pattern of ``cfg``.

        Args:
            w: Dense tensor whose last axis is divisible by ``cfg.m``
            cfg: Pattern and threshold configuration

        Returns:
            MaskedTensor holding the pruned values and their mask
        """
        pass

    def get_metadata(self) -> Dict[str, Any]:
        """Get metadata about the projection.

        Returns:
            Dictionary containing projection metadata
        """
        return {
            "name": self.name.value,
            "description": self.description,
            "continuous": self.continuous,
            "config": self.config,
        }

    def __call__(self, w: np.ndarray, cfg: PruneConfig) -> MaskedTensor:
        w = np.asarray(w)
        check_finite(w)
        return self.project(w, cfg)
