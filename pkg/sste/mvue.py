"""
Unbiased 2:4 sparsification of gradient tensors.

Each block of four keeps two entries drawn with inclusion probabilities
proportional to magnitude (capped at 1, the residual budget spread over the
rest) and rescales the kept entries by 1/π. The pair itself is drawn by
systematic sampling over the cumulative inclusion probabilities, which
realizes the marginals exactly and never repeats an index.
"""
import hashlib
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Optional, Tuple

import numpy as np

from .exceptions import ShapeError
from .models import Provenance
from .projection import Mask, MaskedTensor, as_blocks

N_KEEP = 2
BLOCK = 4


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based uniform stream keyed by (seed, tensor id, step).

    Draw ``k`` of the stream belongs to block ``k`` of the tensor, so the
    values do not depend on the order in which blocks are evaluated.
    ``block_index`` selects a single block's draw.
    """
    seed: int
    tensor_id: str = ""
    step: int = 0
    block_index: Optional[int] = None

    def _generator(self) -> np.random.Generator:
        key = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, _stable_hash(self.tensor_id), self.step])
        return np.random.Generator(np.random.Philox(key))

    def uniforms(self, count: int) -> np.ndarray:
        return self._generator().random(count)

    def uniform(self) -> float:
        index = self.block_index or 0
        return float(self.uniforms(index + 1)[index])

    def for_block(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.tensor_id, self.step, index)


@dataclass(frozen=True)
class SparsifiedGradient:
    values: MaskedTensor
    provenance: Provenance


def inclusion_probabilities(blocks: np.ndarray, n: int = N_KEEP) -> np.ndarray:
    """Inclusion probabilities π ∝ |a| summing to ``n`` per row, capped at 1.

    Entries whose share exceeds 1 are kept with certainty and the remaining
    budget is redistributed over the rest. Rows with at most ``n`` nonzeros
    get π = 1 on their support.
    """
    mags = np.abs(np.asarray(blocks, dtype=np.float64))
    pi = np.zeros_like(mags)
    capped = np.zeros(mags.shape, dtype=bool)
    for _ in range(n + 1):
        budget = n - capped.sum(axis=1, keepdims=True)
        free = np.where(capped, 0.0, mags)
        total = free.sum(axis=1, keepdims=True)
        share = np.divide(budget * free, total, out=np.zeros_like(free), where=total > 0)
        pi = np.where(capped, 1.0, share)
        over = (pi > 1.0) & ~capped
        if not over.any():
            break
        capped |= over
    exact = np.count_nonzero(mags, axis=1) <= n
    pi[exact] = (mags[exact] > 0).astype(np.float64)
    return pi


def _intervals(pi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Contiguous [lower, upper) intervals of length π_i tiling [0, n)."""
    upper = np.cumsum(pi, axis=1)
    # the last positive entry absorbs rounding so the tiling ends exactly at n
    upper = np.where(upper >= upper[:, -1:], float(N_KEEP), upper)
    lower = np.concatenate([np.zeros((pi.shape[0], 1)), upper[:, :-1]], axis=1)
    return lower, upper


def _systematic_pick(pi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Boolean selection of the entries whose interval holds u or u+1."""
    lower, upper = _intervals(pi)
    picks = np.zeros(pi.shape, dtype=bool)
    for offset in (0.0, 1.0):
        point = (u + offset)[:, None]
        picks |= (lower <= point) & (point < upper)
    return picks


def sparsify_blocks(blocks: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sparsify rows of four with one uniform draw per row.

    Returns:
        The sparsified rows and a boolean array marking rows that were
        already 2:4-sparse and passed through unchanged.
    """
    blocks = np.asarray(blocks)
    exact = np.count_nonzero(blocks, axis=1) <= N_KEEP
    pi = inclusion_probabilities(blocks)
    picks = _systematic_pick(pi, u)
    scaled = np.divide(blocks, pi, out=np.zeros(blocks.shape, dtype=np.float64), where=pi > 0)
    out = np.where(picks, scaled, 0.0).astype(blocks.dtype, copy=False)
    out[exact] = blocks[exact]
    return out, exact


def mvue_block(a: np.ndarray, rng: RngStream) -> np.ndarray:
    """Unbiased 2:4 sparsification of a single block of four."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (BLOCK,):
        raise ShapeError(f"mvue_block expects a 4-vector, got shape {a.shape}")
    out, _ = sparsify_blocks(a[None, :], np.array([rng.uniform()]))
    return out[0]


def mvue_tensor(g: np.ndarray, seed: int, step: int, tensor_id: str = "") -> SparsifiedGradient:
    """Block-wise unbiased 2:4 sparsification along the last axis of ``g``."""
    g = np.asarray(g)
    blocks = as_blocks(g, BLOCK)
    stream = RngStream(seed=seed, tensor_id=tensor_id, step=step)
    out, exact = sparsify_blocks(blocks, stream.uniforms(blocks.shape[0]))
    values = out.reshape(g.shape)
    mask = Mask(values != 0, n=N_KEEP, m=BLOCK)
    provenance = Provenance.EXACT if exact.all() else Provenance.SAMPLED
    return SparsifiedGradient(values=MaskedTensor(values=values, mask=mask), provenance=provenance)


def pair_probabilities(pi: np.ndarray) -> Dict[Tuple[int, int], float]:
    """Probability of each index pair under systematic sampling of one block.

    The six candidate pairs are enumerated in lexicographic order; their
    probabilities sum to one and reproduce the marginals ``pi``.
    """
    pi = np.asarray(pi, dtype=np.float64).reshape(1, BLOCK)
    _, upper = _intervals(pi)
    bounds = upper[0]
    cuts = np.unique(np.concatenate([[0.0, 1.0], bounds[bounds < 1.0], bounds[bounds >= 1.0] - 1.0]))
    cuts = cuts[(cuts >= 0.0) & (cuts <= 1.0)]
    probs = {pair: 0.0 for pair in combinations(range(BLOCK), N_KEEP)}
    for left, right in zip(cuts[:-1], cuts[1:]):
        if right <= left:
            continue
        picks = _systematic_pick(pi, np.array([(left + right) / 2]))[0]
        chosen = tuple(int(i) for i in np.flatnonzero(picks))
        if len(chosen) == N_KEEP:
            probs[chosen] += float(right - left)
    return probs


def estimator_variance(a: np.ndarray) -> np.ndarray:
    """Per-coordinate variance a_i² (1/π_i − 1) of the estimator on ``a``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    pi = inclusion_probabilities(a)
    return np.where(pi > 0, a * a * (np.divide(1.0, pi, out=np.ones_like(pi), where=pi > 0) - 1.0), 0.0)


def uniform_pair_variance(a: np.ndarray) -> np.ndarray:
    """Per-coordinate variance of keeping a uniformly random pair scaled by 2."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    return a * a
