"""
Checkpoints: a JSON manifest, one raw little-endian array per tensor and the
frozen scale snapshot.

    <dir>/manifest.json
    <dir>/params/<param id>.bin
    <dir>/moments/<param id>.m.bin, <param id>.v.bin   (Adam only)
    <dir>/scales.json
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from loguru import logger

from ..exceptions import ShapeError
from ..rescaling import ScaleRegistry
from .layers import Parameter
from .optim import OptimizerState

FORMAT_VERSION = 1


def _write_array(path: Path, array: np.ndarray) -> Dict[str, Any]:
    little = array.astype(array.dtype.newbyteorder("<"), copy=False)
    path.write_bytes(np.ascontiguousarray(little).tobytes())
    return {"file": path.name, "dtype": little.dtype.str, "shape": list(array.shape)}


def _read_array(directory: Path, meta: Dict[str, Any]) -> np.ndarray:
    raw = (directory / meta["file"]).read_bytes()
    array = np.frombuffer(raw, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"])
    return array.astype(array.dtype.newbyteorder("="), copy=True)


def save_checkpoint(
    directory: Union[str, Path],
    params: List[Parameter],
    opt: OptimizerState,
    registry: ScaleRegistry,
    step: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write everything needed to resume training bit-exactly after ``step``."""
    root = Path(directory)
    (root / "params").mkdir(parents=True, exist_ok=True)
    (root / "moments").mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "step": step,
        "optimizer": {"kind": opt.kind.value, "t": opt.t},
        "params": {},
        "moments": {},
        "extra": extra or {},
    }
    for param in params:
        manifest["params"][param.id] = _write_array(root / "params" / f"{param.id}.bin", param.w)
        if param.id in opt.exp_avg:
            manifest["moments"][param.id] = {
                "m": _write_array(root / "moments" / f"{param.id}.m.bin", opt.exp_avg[param.id]),
                "v": _write_array(root / "moments" / f"{param.id}.v.bin", opt.exp_avg_sq[param.id]),
            }
    registry.save(root / "scales.json")
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Wrote checkpoint at step {step} to {root}")
    return root


def load_checkpoint(
    directory: Union[str, Path],
    params: List[Parameter],
    opt: OptimizerState,
    registry: ScaleRegistry,
) -> int:
    """Restore parameters, optimizer moments and scales in place; return the saved step."""
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    by_id = {param.id: param for param in params}
    missing = sorted(set(by_id) - set(manifest["params"]))
    if missing:
        raise ShapeError(f"checkpoint at {root} has no entry for {missing}")
    for param_id, meta in manifest["params"].items():
        param = by_id[param_id]
        w = _read_array(root / "params", meta)
        if w.shape != param.w.shape:
            raise ShapeError(f"checkpoint shape {w.shape} does not match '{param_id}' {param.w.shape}")
        param.w = w
        param.zero_grad()
    opt.exp_avg.clear()
    opt.exp_avg_sq.clear()
    for param_id, meta in manifest["moments"].items():
        opt.exp_avg[param_id] = _read_array(root / "moments", meta["m"])
        opt.exp_avg_sq[param_id] = _read_array(root / "moments", meta["v"])
    opt.t = int(manifest["optimizer"]["t"])
    restored = ScaleRegistry.load(root / "scales.json", dynamic=registry.dynamic)
    registry.entries.clear()
    registry.entries.update(restored.entries)
    logger.info(f"Loaded checkpoint from {root} at step {manifest['step']}")
    return int(manifest["step"])
