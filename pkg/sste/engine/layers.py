from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..exceptions import BackwardBeforeForwardError, ShapeError, SparsityViolationError
from ..lowprec import FloatFormat, fp8_cast
from ..models import LayerMode, PruneConfig
from ..mvue import mvue_tensor
from ..projection import Mask, is_nm_valid, mask_of, soft_threshold
from ..rescaling import ScaleRegistry
from .tape import Tape, Var, add, gelu, matmul, relu


@dataclass
class Parameter:
    """Dense master weight and its gradient accumulator."""
    id: str
    w: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    decay_mask: Optional[np.ndarray] = None
    lambda_w: float = 0.0

    def __post_init__(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.w)
        if self.grad.shape != self.w.shape:
            raise ShapeError(f"gradient {self.grad.shape} does not match weight {self.w.shape} for '{self.id}'")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.w)

    def regularized_grad(self) -> np.ndarray:
        """Gradient plus λ_W (w ⊙ m̄) when an SR-STE decay mask is attached."""
        if self.decay_mask is None or self.lambda_w == 0.0:
            return self.grad
        return self.grad + self.lambda_w * (self.w * self.decay_mask)


@dataclass(frozen=True)
class Fp8Config:
    forward: Optional[FloatFormat] = None
    backward: Optional[FloatFormat] = None

    @property
    def enabled(self) -> bool:
        return self.forward is not None or self.backward is not None


@dataclass
class LinearCache:
    x: np.ndarray
    w: np.ndarray
    mask: Optional[Mask]


def he_normal(rng: np.random.Generator, out_features: int, in_features: int, dtype) -> np.ndarray:
    return (rng.standard_normal((out_features, in_features)) * np.sqrt(2.0 / in_features)).astype(dtype)


class SparseLinearLayer:
    """Linear layer z = x S(w)ᵀ + b with a selectable weight path.

    Dense uses w itself; HardSTE and SrSte prune with hard thresholding;
    SSte uses β·soft_threshold(w) with β frozen in the registry. The weight
    gradient always flows to the dense master weight unchanged.
    """

    def __init__(
        self,
        layer_id: str,
        in_features: int,
        out_features: int,
        mode: LayerMode = LayerMode.DENSE,
        prune_cfg: Optional[PruneConfig] = None,
        registry: Optional[ScaleRegistry] = None,
        lambda_w: float = 2e-4,
        mvue_on_gradz: bool = False,
        mvue_on_weights: bool = False,
        fp8: Optional[Fp8Config] = None,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float64,
        seed: int = 0,
    ):
        self.id = layer_id
        self.in_features = in_features
        self.out_features = out_features
        self.mode = LayerMode(mode)
        self.prune_cfg = prune_cfg or PruneConfig()
        self.registry = registry if registry is not None else ScaleRegistry()
        self.lambda_w = lambda_w
        self.mvue_on_gradz = mvue_on_gradz
        self.mvue_on_weights = mvue_on_weights
        self.fp8 = fp8 or Fp8Config()
        self.dtype = dtype
        self.seed = seed
        self.step = 0
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.weight = Parameter(f"{layer_id}.weight", he_normal(rng, out_features, in_features, dtype))
        self.bias = Parameter(f"{layer_id}.bias", np.zeros(out_features, dtype=dtype)) if bias else None
        self._cache: Optional[LinearCache] = None
        self._override: Optional[Tuple[np.ndarray, Optional[Mask]]] = None
        self.last_mask: Optional[Mask] = None

    def __repr__(self) -> str:
        return f"SparseLinearLayer({self.id!r}, {self.in_features}->{self.out_features}, mode={self.mode.value})"

    def parameters(self) -> List[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    @contextmanager
    def using(self, w: np.ndarray, mask: Optional[Mask] = None) -> Iterator[None]:
        """Temporarily evaluate with explicit dense weights and (optionally) a fixed mask."""
        previous = self._override
        self._override = (np.asarray(w, dtype=self.dtype), mask)
        try:
            yield
        finally:
            self._override = previous

    def effective_weight(self, w: np.ndarray, mask: Optional[Mask] = None) -> Tuple[np.ndarray, Optional[Mask]]:
        """Forward weight w̃ for dense weights ``w``; ``mask`` fixes the support instead of mask_of(w)."""
        cfg = self.prune_cfg
        if self.mode is LayerMode.DENSE:
            return w, mask
        if self.mode is LayerMode.S_STE:
            beta = self.registry.get_or_freeze(self.weight.id, w, cfg)
            soft = soft_threshold(w, cfg)
            values = soft.values if mask is None else soft.values * mask.bits
            return (beta * values).astype(w.dtype, copy=False), soft.mask if mask is None else mask
        mask = mask if mask is not None else mask_of(w, cfg)
        return np.where(mask.bits, w, 0).astype(w.dtype, copy=False), mask

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.id}: expected input (batch, {self.in_features}), got {x.shape}")
        w, fixed_mask = self._override if self._override is not None else (self.weight.w, None)
        w_eff, mask = self.effective_weight(w, fixed_mask)
        if self.mode.is_sparse and not is_nm_valid(w_eff, self.prune_cfg):
            raise SparsityViolationError(f"{self.id}: forward weight breaks the {self.prune_cfg.n}:{self.prune_cfg.m} pattern")
        x_c = fp8_cast(x, self.fp8.forward)
        w_c = fp8_cast(w_eff, self.fp8.forward)
        z = x_c @ w_c.T
        if self.bias is not None:
            z = z + self.bias.w
        if cache:
            self._cache = LinearCache(x=x_c, w=w_c, mask=mask)
            self.last_mask = mask
            if self.mode is LayerMode.SR_STE and mask is not None:
                self.weight.decay_mask = (~mask.bits).astype(self.dtype)
                self.weight.lambda_w = self.lambda_w
            else:
                self.weight.decay_mask = None
        return z

    def backward(self, grad_z: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the input; accumulates weight and bias gradients (STE)."""
        if self._cache is None:
            raise BackwardBeforeForwardError(f"{self.id}: backward called before forward")
        cache = self._cache
        grad_z = np.asarray(grad_z, dtype=self.dtype)
        gz = fp8_cast(grad_z, self.fp8.backward)
        w_dx = cache.w
        if self.mvue_on_weights:
            w_dx = mvue_tensor(cache.w.T, self.seed, self.step, f"{self.id}.weight_t").values.values.T
        grad_x = gz @ w_dx
        gz_t = gz.T
        if self.mvue_on_gradz:
            gz_t = mvue_tensor(gz_t, self.seed, self.step, f"{self.id}.grad_z").values.values
        self.weight.grad = self.weight.grad + (gz_t @ cache.x).astype(self.dtype, copy=False)
        if self.bias is not None:
            self.bias.grad = self.bias.grad + gz.sum(axis=0)
        return grad_x

    def __call__(self, x: Var, tape: Optional[Tape] = None) -> Var:
        out = Var(self.forward(x.value, cache=tape is not None))
        if tape is not None:
            def backward() -> None:
                if out.grad is not None:
                    x.accumulate(self.backward(out.grad))
            tape.record(backward)
        return out


class Activation:
    """Elementwise nonlinearity."""

    def __init__(self, kind: str = "relu"):
        if kind not in ("relu", "gelu"):
            raise ValueError(f"Unknown activation '{kind}'")
        self.kind = kind

    def parameters(self) -> List[Parameter]:
        return []

    def __call__(self, x: Var, tape: Optional[Tape] = None) -> Var:
        return relu(x, tape) if self.kind == "relu" else gelu(x, tape)


class ResidualFFNBlock:
    """x + W₂ act(W₁ x): the feed-forward half of a transformer block."""

    def __init__(self, up: SparseLinearLayer, down: SparseLinearLayer, activation: str = "gelu"):
        self.up = up
        self.down = down
        self.act = Activation(activation)

    def parameters(self) -> List[Parameter]:
        return self.up.parameters() + self.down.parameters()

    def linears(self) -> List[SparseLinearLayer]:
        return [self.up, self.down]

    def __call__(self, x: Var, tape: Optional[Tape] = None) -> Var:
        return add(x, self.down(self.act(self.up(x, tape), tape), tape), tape)


class Embedding:
    """Dense lookup table applied to one-hot (or bag-of-one-hot) inputs."""

    def __init__(self, layer_id: str, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float64):
        self.id = layer_id
        self.in_features = in_features
        self.table = Parameter(
            f"{layer_id}.table",
            (rng.standard_normal((in_features, out_features)) / np.sqrt(in_features)).astype(dtype),
        )

    def parameters(self) -> List[Parameter]:
        return [self.table]

    def __call__(self, x: Var, tape: Optional[Tape] = None) -> Var:
        return matmul(x, leaf(self.table, tape), tape)


def leaf(param: Parameter, tape: Optional[Tape] = None) -> Var:
    """Var over a parameter whose tape gradient is added to ``param.grad``.

    The collecting closure is recorded before the ops that consume the Var,
    so it runs after all of them during the reverse sweep.
    """
    var = Var(param.w)
    if tape is not None:
        def collect() -> None:
            if var.grad is not None:
                param.grad = param.grad + var.grad
        tape.record(collect)
    return var
