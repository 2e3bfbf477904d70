"""Reverse-mode tape, sparse linear layers, networks and optimizers."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Activation, Embedding, Fp8Config, Parameter, ResidualFFNBlock, SparseLinearLayer
from .network import Batch, LayerOptions, Network, backward, build_ffn_stack, build_mlp, forward, loss_and_grad, loss_eval
from .optim import OptimizerState, lr_at, step
from .tape import Tape, Var

__all__ = [
    "Activation",
    "Batch",
    "Embedding",
    "Fp8Config",
    "LayerOptions",
    "Network",
    "OptimizerState",
    "Parameter",
    "ResidualFFNBlock",
    "SparseLinearLayer",
    "Tape",
    "Var",
    "backward",
    "build_ffn_stack",
    "build_mlp",
    "forward",
    "load_checkpoint",
    "loss_and_grad",
    "loss_eval",
    "lr_at",
    "save_checkpoint",
    "step",
]
