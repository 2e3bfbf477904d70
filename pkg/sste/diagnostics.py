"""
Training-dynamics instrumentation.

The amount of descent (AoD) of a step is F(w_k) − F(w_{k+1}) on a fixed
probe batch; the predicted AoD is its first-order estimate gradᵀ(w_k − w_{k+1}).
ΔF₁ and ΔF₂ split the AoD into the part with the mask allowed to change and
the part with the mask held at m_k. Flip rates compare mask_of(w) between
consecutive traced steps.
"""
from contextlib import contextmanager
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .engine.network import Batch, Network, loss_eval
from .exceptions import EmptySampleError, ShapeError
from .models import RunSummary, StepTrace
from .projection import Mask, flip_count

Weights = Dict[str, np.ndarray]
Masks = Dict[str, Mask]

FINAL_PHASE = 0.1
EARLY_PHASE = 0.1


def aod(f_k: float, f_k1: float) -> float:
    """Actual amount of descent F_k − F_{k+1}."""
    return float(f_k) - float(f_k1)


def predicted_aod(
    grad: Union[np.ndarray, Mapping[str, np.ndarray]],
    w_k: Union[np.ndarray, Mapping[str, np.ndarray]],
    w_k1: Union[np.ndarray, Mapping[str, np.ndarray]],
) -> float:
    """gradᵀ(w_k − w_{k+1}), summed over parameters when given mappings."""
    if isinstance(grad, Mapping):
        return float(sum(predicted_aod(grad[key], w_k[key], w_k1[key]) for key in grad))  # type: ignore[index]
    g = np.asarray(grad, dtype=np.float64).ravel()
    step = (np.asarray(w_k, dtype=np.float64) - np.asarray(w_k1, dtype=np.float64)).ravel()
    if g.shape != step.shape:
        raise ShapeError(f"gradient {g.shape} and weight step {step.shape} differ")
    return float(g @ step)


def snapshot_params(net: Network) -> Weights:
    """Copies of every parameter of ``net`` keyed by parameter id."""
    return {param.id: param.w.copy() for param in net.parameters()}


def gradients(net: Network) -> Weights:
    return {param.id: param.grad.copy() for param in net.parameters()}


@contextmanager
def evaluated_at(net: Network, params: Weights, masks: Optional[Masks] = None) -> Iterator[Network]:
    """Temporarily load ``params`` into ``net`` with sparse-layer masks fixed to ``masks``."""
    saved = snapshot_params(net)
    by_id = {param.id: param for param in net.parameters()}
    try:
        for param_id, w in params.items():
            by_id[param_id].w = w
        sparse_w = {layer.id: layer.weight.w for layer in net.sparse_layers}
        with net.using(sparse_w, masks):
            yield net
    finally:
        for param_id, w in saved.items():
            by_id[param_id].w = w


def loss_at(net: Network, params: Weights, batch: Batch, masks: Optional[Masks] = None) -> float:
    with evaluated_at(net, params, masks):
        return loss_eval(net, batch)


def delta_f1_f2(
    net: Network,
    w_k: Weights,
    w_k1: Weights,
    masks_k: Masks,
    masks_k1: Masks,
    batch: Batch,
) -> Tuple[float, float]:
    """(ΔF₁, ΔF₂) for the step w_k → w_{k+1}.

    ΔF₁ = F(w_k⊙m_k) − F(w_{k+1}⊙m_{k+1}) lets the mask change with the
    weights; ΔF₂ = F(w_k⊙m_k) − F(w_{k+1}⊙m_k) keeps the old mask. For
    S-STE layers the frozen β multiplies every evaluation; dense layers
    ignore masks.
    """
    f_start = loss_at(net, w_k, batch, masks_k)
    f_moved = loss_at(net, w_k1, batch, masks_k1)
    if all(masks_k[key] == masks_k1[key] for key in masks_k):
        return f_start - f_moved, f_start - f_moved
    f_weights_only = loss_at(net, w_k1, batch, masks_k)
    return f_start - f_moved, f_start - f_weights_only


def ecdf(samples: Sequence[float]) -> List[Tuple[float, float]]:
    """Right-continuous empirical CDF as sorted (value, cumulative fraction) points."""
    values = np.asarray(list(samples), dtype=np.float64)
    if values.size == 0:
        raise EmptySampleError("ecdf needs at least one sample")
    unique, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / values.size
    return [(float(v), float(f)) for v, f in zip(unique, fractions)]


class MaskTracker:
    """Flip statistics between consecutive traced steps across all tracked layers."""

    def __init__(self) -> None:
        self.previous: Optional[Masks] = None

    def update(self, masks: Masks) -> Tuple[Optional[float], Optional[int], Dict[str, str]]:
        """Record ``masks`` and return (flip rate, flip count, digests); rate and count are None on the first call."""
        digests = {layer_id: mask.digest() for layer_id, mask in sorted(masks.items())}
        previous, self.previous = self.previous, dict(masks)
        if previous is None or not masks:
            return None, None, digests
        flips = sum(flip_count(previous[layer_id], mask) for layer_id, mask in masks.items())
        total = sum(mask.bits.size for mask in masks.values())
        return flips / total, flips, digests


def _phase_mean(values: List[Tuple[int, float]]) -> Optional[float]:
    return float(np.mean([v for _, v in values])) if values else None


def summarize(traces: Sequence[StepTrace], final_train_loss: float, val_loss: float, total_steps: int) -> RunSummary:
    """Summary statistics over the traced steps of a finished run."""
    flips = [(trace.step, trace.flip_rate) for trace in traces if trace.flip_rate is not None]
    final_start = total_steps * (1.0 - FINAL_PHASE)
    early_end = max(total_steps * EARLY_PHASE, 1)
    final = [(s, v) for s, v in flips if s >= final_start] or flips[-1:]
    early = [(s, v) for s, v in flips if s < early_end] or flips[:1]
    aods = [trace.aod for trace in traces if trace.aod is not None]
    return RunSummary(
        final_train_loss=float(final_train_loss),
        val_loss=float(val_loss),
        mean_flip_rate=_phase_mean(flips),
        early_flip_rate=_phase_mean(early),
        final_flip_rate=_phase_mean(final),
        negative_aod_fraction=float(np.mean(np.asarray(aods) < 0)) if aods else None,
        aod_ecdf=ecdf(aods) if aods else [],
    )
