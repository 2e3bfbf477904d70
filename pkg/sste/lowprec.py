"""
Software emulation of 8-bit floating point casts with per-tensor scaling.

Values are rounded to the nearest point of the format grid (ties to even)
and kept in working precision. Formats are described by exponent bits,
mantissa bits and bias; ``finite_only`` formats (e4m3 style) spend every
exponent code on finite numbers except the single all-ones NaN code, the
others reserve the top exponent for Inf/NaN.
"""
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .exceptions import ConfigError, NonFiniteError


@dataclass(frozen=True)
class FloatFormat:
    exp_bits: int
    man_bits: int
    bias: int
    saturating: bool = True
    finite_only: bool = False

    def __post_init__(self) -> None:
        if self.exp_bits + self.man_bits != 7:
            raise ConfigError(f"8-bit formats need exp_bits + man_bits == 7, got {self.exp_bits}+{self.man_bits}")
        if self.exp_bits < 2 or self.man_bits < 1:
            raise ConfigError("formats need at least 2 exponent bits and 1 mantissa bit")

    @property
    def name(self) -> str:
        return f"e{self.exp_bits}m{self.man_bits}"

    @property
    def max_exponent(self) -> int:
        top = 2 ** self.exp_bits - 1
        return (top if self.finite_only else top - 1) - self.bias

    @property
    def min_exponent(self) -> int:
        """Exponent of the smallest normal number."""
        return 1 - self.bias

    @property
    def max_representable(self) -> float:
        # finite_only formats lose the all-ones mantissa at the top exponent to NaN
        lost = 2.0 ** (1 - self.man_bits) if self.finite_only else 2.0 ** -self.man_bits
        return (2.0 - lost) * 2.0 ** self.max_exponent

    @property
    def min_normal(self) -> float:
        return 2.0 ** self.min_exponent

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (self.min_exponent - self.man_bits)

    @property
    def relative_error_bound(self) -> float:
        """Half-ULP relative error for normal-range values."""
        return 2.0 ** (-self.man_bits - 1)

    def grid(self) -> np.ndarray:
        """All non-negative finite values of the format, ascending."""
        values = []
        for exp_code in range(2 ** self.exp_bits):
            for man_code in range(2 ** self.man_bits):
                if exp_code == 0:
                    value = (man_code / 2 ** self.man_bits) * 2.0 ** self.min_exponent
                else:
                    value = (1.0 + man_code / 2 ** self.man_bits) * 2.0 ** (exp_code - self.bias)
                if value <= self.max_representable:
                    values.append(value)
        return np.unique(np.array(values, dtype=np.float64))


FORMATS: Dict[str, FloatFormat] = {
    "e4m3": FloatFormat(exp_bits=4, man_bits=3, bias=7, finite_only=True),
    "e5m2": FloatFormat(exp_bits=5, man_bits=2, bias=15),
    "e3m4": FloatFormat(exp_bits=3, man_bits=4, bias=3, finite_only=True),
}


def parse_format(name: Optional[str]) -> Optional[FloatFormat]:
    """Format for a CLI string; ``None`` or ``"none"`` disables casting."""
    if name is None or name.lower() == "none":
        return None
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ConfigError(f"Unknown float format '{name}'; expected one of {sorted(FORMATS)} or 'none'")


@dataclass(frozen=True)
class ScaledQuantizedTensor:
    """Values on the format grid (in working precision) and their per-tensor scale."""
    codes: np.ndarray
    scale: float
    fmt: FloatFormat


def compute_scale(t: np.ndarray, fmt: FloatFormat) -> float:
    """Scale mapping amax(|t|) onto the format maximum; 1 for an all-zero tensor."""
    t = np.asarray(t)
    if not np.isfinite(t).all():
        raise NonFiniteError("cannot compute an FP8 scale for a tensor with NaN or Inf")
    amax = float(np.max(np.abs(t))) if t.size else 0.0
    if amax == 0.0:
        return 1.0
    return fmt.max_representable / amax


def round_to_format(x: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    """Round to the nearest grid point of ``fmt``, ties to even."""
    x = np.asarray(x, dtype=np.float64)
    mag = np.abs(x)
    _, exponent = np.frexp(mag)
    # frexp gives mag = f * 2**e with f in [0.5, 1), so the binade is e - 1
    binade = np.maximum(exponent - 1, fmt.min_exponent)
    quantum = np.ldexp(1.0, binade - fmt.man_bits)
    rounded = np.round(mag / quantum) * quantum
    if fmt.saturating:
        rounded = np.minimum(rounded, fmt.max_representable)
    else:
        rounded = np.where(rounded > fmt.max_representable, np.inf, rounded)
    return np.copysign(rounded, x)


def quantize(t: np.ndarray, fmt: FloatFormat, scale: float) -> ScaledQuantizedTensor:
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    t = np.asarray(t)
    codes = round_to_format(t.astype(np.float64) * scale, fmt)
    return ScaledQuantizedTensor(codes=codes, scale=float(scale), fmt=fmt)


def dequantize(q: ScaledQuantizedTensor) -> np.ndarray:
    return q.codes / q.scale


def fp8_cast(t: np.ndarray, fmt: Optional[FloatFormat]) -> np.ndarray:
    """Per-tensor scaled round trip through ``fmt``, returned in the dtype of ``t``."""
    t = np.asarray(t)
    if fmt is None:
        return t
    q = quantize(t, fmt, compute_scale(t, fmt))
    return dequantize(q).astype(t.dtype, copy=False)
