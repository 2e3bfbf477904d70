"""Per-tensor scale β for soft-thresholded weights: w̃ = β · S_soft(w)."""
import json
import threading
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .models import PruneConfig, RescaleRecipe, ScaleEntry
from .projection import MaskedTensor, soft_threshold


def _values(s: Union[MaskedTensor, np.ndarray]) -> np.ndarray:
    return s.values if isinstance(s, MaskedTensor) else np.asarray(s)


def beta_min_mse_flagged(w: np.ndarray, s: Union[MaskedTensor, np.ndarray]) -> Tuple[float, bool]:
    """Minimizer of ‖w − β s‖² and a flag set when ``s`` is identically zero."""
    w = np.asarray(w, dtype=np.float64).ravel()
    sv = _values(s).astype(np.float64).ravel()
    denom = float(sv @ sv)
    if denom == 0.0:
        return 1.0, True
    return float(w @ sv) / denom, False


def beta_keep_l1_flagged(w: np.ndarray, s: Union[MaskedTensor, np.ndarray]) -> Tuple[float, bool]:
    """‖w‖₁ / ‖s‖₁ and a flag set when ‖s‖₁ is zero."""
    sv = _values(s)
    denom = float(np.abs(sv).sum(dtype=np.float64))
    if denom == 0.0:
        return 1.0, True
    return float(np.abs(np.asarray(w)).sum(dtype=np.float64)) / denom, False


def beta_min_mse(w: np.ndarray, s: Union[MaskedTensor, np.ndarray]) -> float:
    """β* = wᵀs / ‖s‖²; 1 when ``s`` is identically zero."""
    return beta_min_mse_flagged(w, s)[0]


def beta_keep_l1(w: np.ndarray, s: Union[MaskedTensor, np.ndarray]) -> float:
    return beta_keep_l1_flagged(w, s)[0]


def scale_mse(w: np.ndarray, s: Union[MaskedTensor, np.ndarray], beta: float) -> float:
    """‖w − β s‖²."""
    diff = np.asarray(w, dtype=np.float64) - beta * _values(s).astype(np.float64)
    return float(np.sum(diff * diff))


def compute_beta(w: np.ndarray, cfg: PruneConfig) -> Tuple[float, bool]:
    """β for the recipe in ``cfg`` computed from the current weights."""
    recipe = RescaleRecipe(cfg.rescale)
    if recipe is RescaleRecipe.NONE:
        return 1.0, False
    s = soft_threshold(w, cfg)
    if recipe is RescaleRecipe.KEEP_L1:
        return beta_keep_l1_flagged(w, s)
    return beta_min_mse_flagged(w, s)


class ScaleRegistry:
    """Per-parameter scales, frozen at their first retrieval.

    The first call for a key computes β and freezes it under a lock; every
    later call returns the stored value. With ``dynamic=True`` the registry
    recomputes β on every call and never freezes (ablation only).
    """

    def __init__(self, dynamic: bool = False):
        self.dynamic = dynamic
        self.entries: Dict[str, ScaleEntry] = {}
        self._lock = threading.Lock()

    def __contains__(self, param_id: str) -> bool:
        return param_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, param_id: str) -> Optional[float]:
        entry = self.entries.get(param_id)
        return entry.beta if entry is not None else None

    def get_or_freeze(self, param_id: str, w: np.ndarray, cfg: PruneConfig) -> float:
        entry = self.entries.get(param_id)
        if entry is not None and entry.frozen and not self.dynamic:
            return entry.beta
        with self._lock:
            entry = self.entries.get(param_id)
            if entry is not None and entry.frozen and not self.dynamic:
                return entry.beta
            beta, degenerate = compute_beta(w, cfg)
            if degenerate:
                logger.warning(f"Soft-thresholded '{param_id}' is identically zero; using beta=1")
            self.entries[param_id] = ScaleEntry(
                beta=beta,
                frozen=not self.dynamic,
                recipe=RescaleRecipe(cfg.rescale),
                degenerate=degenerate,
            )
        if entry is None:
            logger.info(f"Froze beta for '{param_id}' at {beta:.6g} ({RescaleRecipe(cfg.rescale).value})")
        return beta

    def snapshot(self) -> Dict[str, float]:
        return {param_id: entry.beta for param_id, entry in sorted(self.entries.items())}

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), indent=2)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_snapshot(
        cls,
        snapshot: Dict[str, float],
        recipe: RescaleRecipe = RescaleRecipe.MIN_MSE,
        dynamic: bool = False,
    ) -> "ScaleRegistry":
        """Registry holding ``snapshot``; entries are frozen unless ``dynamic``."""
        registry = cls(dynamic=dynamic)
        for param_id, beta in snapshot.items():
            registry.entries[param_id] = ScaleEntry(beta=float(beta), frozen=not dynamic, recipe=recipe)
        return registry

    @classmethod
    def load(cls, path: Union[str, Path], dynamic: bool = False) -> "ScaleRegistry":
        return cls.from_snapshot(json.loads(Path(path).read_text(encoding="utf-8")), dynamic=dynamic)


def get_or_freeze(reg: ScaleRegistry, param_id: str, w: np.ndarray, cfg: PruneConfig) -> float:
    """β for ``param_id``: computed per ``cfg.rescale`` on first call, frozen afterwards."""
    return reg.get_or_freeze(param_id, w, cfg)
