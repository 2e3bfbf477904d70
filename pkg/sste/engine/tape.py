"""
Minimal reverse-mode differentiation.

A ``Tape`` records one backward closure per operation in forward order and
replays them in reverse. Operations called with ``tape=None`` are plain
evaluations and record nothing.
"""
from typing import Callable, List, Optional

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)


class Var:
    """A value and the gradient accumulated into it."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, has_grad={self.grad is not None})"


class Tape:
    def __init__(self) -> None:
        self._entries: List[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, backward: Callable[[], None]) -> None:
        self._entries.append(backward)

    def backward(self, output: Var, seed: Optional[np.ndarray] = None) -> None:
        """Propagate from ``output`` (a scalar unless ``seed`` is given) through every recorded op."""
        output.grad = np.ones_like(output.value) if seed is None else np.asarray(seed)
        for entry in reversed(self._entries):
            entry()
        self._entries.clear()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _upstream(v: Var) -> np.ndarray:
    return v.grad if v.grad is not None else np.zeros_like(v.value)


def matmul(a: Var, b: Var, tape: Optional[Tape] = None) -> Var:
    out = Var(a.value @ b.value)
    if tape is not None:
        def backward() -> None:
            g = _upstream(out)
            a.accumulate(g @ b.value.T)
            b.accumulate(a.value.T @ g)
        tape.record(backward)
    return out


def add(a: Var, b: Var, tape: Optional[Tape] = None) -> Var:
    out = Var(a.value + b.value)
    if tape is not None:
        def backward() -> None:
            g = _upstream(out)
            a.accumulate(_unbroadcast(g, a.shape))
            b.accumulate(_unbroadcast(g, b.shape))
        tape.record(backward)
    return out


def relu(x: Var, tape: Optional[Tape] = None) -> Var:
    out = Var(np.maximum(x.value, 0))
    if tape is not None:
        def backward() -> None:
            x.accumulate(_upstream(out) * (x.value > 0))
        tape.record(backward)
    return out


def gelu(x: Var, tape: Optional[Tape] = None) -> Var:
    """tanh approximation of GeLU."""
    v = x.value
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    th = np.tanh(inner)
    out = Var(0.5 * v * (1.0 + th))
    if tape is not None:
        def backward() -> None:
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
            local = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th ** 2) * d_inner
            x.accumulate(_upstream(out) * local)
        tape.record(backward)
    return out


def softmax_cross_entropy(logits: Var, labels: np.ndarray, tape: Optional[Tape] = None) -> Var:
    """Mean cross-entropy of integer ``labels`` under softmax(logits)."""
    z = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(z.shape[0])
    out = Var(np.asarray(-log_probs[rows, labels].mean()))
    if tape is not None:
        def backward() -> None:
            probs = np.exp(log_probs)
            probs[rows, labels] -= 1.0
            logits.accumulate(_upstream(out) * probs / z.shape[0])
        tape.record(backward)
    return out


def mse(pred: Var, target: np.ndarray, tape: Optional[Tape] = None) -> Var:
    """Mean over all elements of (pred − target)²."""
    diff = pred.value - np.asarray(target, dtype=pred.value.dtype)
    out = Var(np.asarray(np.mean(diff * diff)))
    if tape is not None:
        def backward() -> None:
            pred.accumulate(_upstream(out) * 2.0 * diff / diff.size)
        tape.record(backward)
    return out
