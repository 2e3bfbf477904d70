from contextlib import ExitStack, contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Union

import numpy as np

from ..exceptions import ConfigError
from ..models import LayerMode, PruneConfig
from ..projection import Mask, mask_of
from ..rescaling import ScaleRegistry
from .layers import Activation, Embedding, Fp8Config, Parameter, ResidualFFNBlock, SparseLinearLayer
from .tape import Tape, Var, mse, softmax_cross_entropy

Module = Union[SparseLinearLayer, Activation, ResidualFFNBlock, Embedding]


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.x.shape[0])


class Network:
    """Ordered stack of modules followed by a loss head ("mse" or "xent").

    Only the linear layers listed in ``sparse_layers`` (the FFN linears) carry
    a sparse mode; embeddings and output heads stay dense.
    """

    def __init__(self, modules: Sequence[Module], loss: str, sparse_layers: Sequence[SparseLinearLayer], registry: ScaleRegistry):
        if loss not in ("mse", "xent"):
            raise ConfigError(f"Unknown loss head '{loss}'")
        self.modules = list(modules)
        self.loss_kind = loss
        self.sparse_layers = list(sparse_layers)
        self.registry = registry

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for module in self.modules:
            params.extend(module.parameters())
        return params

    def linears(self) -> List[SparseLinearLayer]:
        layers: List[SparseLinearLayer] = []
        for module in self.modules:
            if isinstance(module, SparseLinearLayer):
                layers.append(module)
            elif isinstance(module, ResidualFFNBlock):
                layers.extend(module.linears())
        return layers

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def set_step(self, step: int) -> None:
        for layer in self.linears():
            layer.step = step

    def set_mode(self, mode: LayerMode) -> None:
        for layer in self.sparse_layers:
            layer.mode = LayerMode(mode)

    def sparse_weights(self) -> Dict[str, np.ndarray]:
        return {layer.id: layer.weight.w.copy() for layer in self.sparse_layers}

    def masks(self) -> Dict[str, Mask]:
        """mask_of(w) for every sparse-designated layer, in any mode."""
        return {layer.id: mask_of(layer.weight.w, layer.prune_cfg) for layer in self.sparse_layers}

    @contextmanager
    def using(self, weights: Dict[str, np.ndarray], masks: Optional[Dict[str, Mask]] = None) -> Iterator["Network"]:
        """Evaluate sparse layers with explicit dense weights and optional fixed masks."""
        by_id = {layer.id: layer for layer in self.sparse_layers}
        with ExitStack() as stack:
            for layer_id, w in weights.items():
                mask = masks.get(layer_id) if masks else None
                stack.enter_context(by_id[layer_id].using(w, mask))
            yield self

    def forward(self, x: np.ndarray, tape: Optional[Tape] = None) -> Var:
        out = Var(np.asarray(x, dtype=self._dtype()))
        for module in self.modules:
            out = module(out, tape)
        return out

    def loss(self, batch: Batch, tape: Optional[Tape] = None) -> Var:
        out = self.forward(batch.x, tape)
        if self.loss_kind == "mse":
            return mse(out, batch.y, tape)
        return softmax_cross_entropy(out, batch.y, tape)

    def _dtype(self):
        linears = self.linears()
        return linears[0].dtype if linears else np.float64


def loss_eval(net: Network, batch: Batch) -> float:
    """Mean loss over ``batch``; records nothing and draws no MVUE samples."""
    return float(net.loss(batch, tape=None).value)


def loss_and_grad(net: Network, batch: Batch) -> float:
    """Zero gradients, run forward and backward, and return the loss."""
    net.zero_grad()
    tape = Tape()
    loss = net.loss(batch, tape)
    tape.backward(loss)
    return float(loss.value)


def forward(layer: SparseLinearLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(x, cache=True)


def backward(layer: SparseLinearLayer, grad_z: np.ndarray) -> np.ndarray:
    return layer.backward(grad_z)


@dataclass
class LayerOptions:
    """Per-network settings shared by every sparse-designated linear layer."""
    mode: LayerMode = LayerMode.DENSE
    prune_cfg: Optional[PruneConfig] = None
    lambda_w: float = 2e-4
    mvue_on_gradz: bool = False
    mvue_on_weights: bool = False
    fp8: Optional[Fp8Config] = None
    seed: int = 0
    dtype: type = np.float64

    def check_width(self, layer_id: str, in_features: int) -> None:
        m = (self.prune_cfg or PruneConfig()).m
        if in_features % m != 0:
            raise ConfigError(f"{layer_id}: input width {in_features} is not divisible by block size {m}")


def _linear(
    layer_id: str,
    in_features: int,
    out_features: int,
    opts: LayerOptions,
    registry: ScaleRegistry,
    rng: np.random.Generator,
    sparse: bool,
) -> SparseLinearLayer:
    if sparse:
        opts.check_width(layer_id, in_features)
    return SparseLinearLayer(
        layer_id,
        in_features,
        out_features,
        mode=opts.mode if sparse else LayerMode.DENSE,
        prune_cfg=opts.prune_cfg,
        registry=registry,
        lambda_w=opts.lambda_w,
        mvue_on_gradz=opts.mvue_on_gradz,
        mvue_on_weights=opts.mvue_on_weights and sparse,
        fp8=opts.fp8,
        rng=rng,
        dtype=opts.dtype,
        seed=opts.seed,
    )


def build_mlp(
    input_dim: int,
    hidden: Sequence[int],
    output_dim: int,
    opts: LayerOptions,
    loss: str = "mse",
    activation: str = "relu",
    sparse_head: bool = False,
    registry: Optional[ScaleRegistry] = None,
) -> Network:
    """MLP whose hidden linears are sparse-designated; the head is dense unless ``sparse_head``."""
    registry = registry if registry is not None else ScaleRegistry()
    rng = np.random.default_rng(opts.seed)
    widths = [input_dim, *hidden, output_dim]
    modules: List[Module] = []
    sparse: List[SparseLinearLayer] = []
    for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        is_head = index == len(widths) - 2
        designated = sparse_head or not is_head
        layer = _linear("head" if is_head else f"fc{index}", fan_in, fan_out, opts, registry, rng, designated)
        modules.append(layer)
        if designated:
            sparse.append(layer)
        if not is_head:
            modules.append(Activation(activation))
    return Network(modules, loss=loss, sparse_layers=sparse, registry=registry)


def build_ffn_stack(
    input_dim: int,
    d_model: int,
    d_ff: int,
    n_blocks: int,
    output_dim: int,
    opts: LayerOptions,
    activation: str = "gelu",
    registry: Optional[ScaleRegistry] = None,
) -> Network:
    """Embedding, ``n_blocks`` residual FFN blocks with sparse linears, dense softmax head."""
    registry = registry if registry is not None else ScaleRegistry()
    rng = np.random.default_rng(opts.seed)
    modules: List[Module] = [Embedding("embed", input_dim, d_model, rng, dtype=opts.dtype)]
    sparse: List[SparseLinearLayer] = []
    for index in range(n_blocks):
        up = _linear(f"block{index}.up", d_model, d_ff, opts, registry, rng, True)
        down = _linear(f"block{index}.down", d_ff, d_model, opts, registry, rng, True)
        modules.append(ResidualFFNBlock(up, down, activation))
        sparse.extend([up, down])
    modules.append(_linear("head", d_model, output_dim, opts, registry, rng, False))
    return Network(modules, loss="xent", sparse_layers=sparse, registry=registry)
