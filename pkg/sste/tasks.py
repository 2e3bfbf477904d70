"""
Desk-scale datasets for the experiment runners.

Every task yields train/validation/probe splits. Minibatch indices are a pure
function of (seed, step), so a resumed run draws the same batches.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from loguru import logger

from .config import ExperimentConfig
from .engine.network import Batch
from .exceptions import ConfigError
from .models import PruneConfig, Task
from .projection import hard_threshold

CHAR_CORPUS = """\
the river runs past the mill and under the old stone bridge. in spring the water is high and brown,
and the miller opens the gates so the wheel turns all day. children stand on the bridge and drop
sticks into the current, then run to the other side to see whose stick comes out first. in summer the
river is low and clear, and you can see the fish resting in the shade of the reeds. the miller sits
by the door and mends his nets, and the wheel turns slowly or not at all. in autumn the leaves fall
on the water and drift down toward the town, red and yellow and brown, and the mill grinds the grain
from the fields. in winter the edges of the river freeze, the wheel is still, and the bridge is white
with frost in the morning. every year the river runs the same way, past the mill and under the bridge,
and every year the town is a little older and the children a little taller.
"""


@dataclass
class Dataset:
    """Train, validation and probe splits plus the loss head they call for."""
    train: Batch
    val: Batch
    probe: Batch
    input_dim: int
    output_dim: int
    loss: str
    seed: int

    def minibatch(self, step: int, batch_size: int) -> Batch:
        """Minibatch for ``step``; sampled without replacement when the split is large enough."""
        n = len(self.train)
        rng = np.random.default_rng([self.seed, 7919, step])
        if batch_size >= n:
            return self.train
        idx = np.sort(rng.choice(n, size=batch_size, replace=False))
        return Batch(self.train.x[idx], self.train.y[idx])


def toy_batch(dtype=np.float64) -> Batch:
    """Single sample whose squared error is g(w₁, w₂) = (w₁ − w₂)² for a bias-free 2→1 linear map."""
    return Batch(x=np.array([[1.0, -1.0]], dtype=dtype), y=np.array([[0.0]], dtype=dtype))


def synthetic_regression(
    n_train: int, n_val: int, n_probe: int, input_dim: int, output_dim: int, noise: float, seed: int, dtype
) -> Dataset:
    """Realizable linear targets y = x A + c (+ optional Gaussian noise)."""
    rng = np.random.default_rng([seed, 101])
    total = n_train + n_val + n_probe
    x = rng.standard_normal((total, input_dim))
    a = rng.standard_normal((input_dim, output_dim)) / np.sqrt(input_dim)
    c = 0.1 * rng.standard_normal(output_dim)
    y = x @ a + c
    if noise > 0:
        y = y + noise * rng.standard_normal(y.shape)
    train, val, probe = _split(x.astype(dtype), y.astype(dtype), n_train, n_val)
    return Dataset(train, val, probe, input_dim, output_dim, "mse", seed)


def planted_labeller(input_dim: int, hidden: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """2:4-sparse first layer and dense readout of the labelling network."""
    w = hard_threshold(rng.standard_normal((hidden, input_dim)), PruneConfig()).values
    v = rng.standard_normal(hidden)
    return w, v


def synthetic_classification(
    n_train: int, n_val: int, n_probe: int, input_dim: int, noise: float, seed: int, dtype
) -> Dataset:
    """Two classes labelled by a planted 2:4-sparse ReLU network; ``noise`` is the label flip rate."""
    if input_dim % 4 != 0:
        raise ConfigError(f"classification input width {input_dim} is not divisible by 4")
    rng = np.random.default_rng([seed, 202])
    total = n_train + n_val + n_probe
    x = rng.standard_normal((total, input_dim))
    w, v = planted_labeller(input_dim, 8, rng)
    score = np.maximum(x @ w.T, 0.0) @ v
    labels = (score > np.median(score[:n_train])).astype(np.int64)
    if noise > 0:
        flip = rng.random(total) < noise
        labels = np.where(flip, 1 - labels, labels)
    train, val, probe = _split(x.astype(dtype), labels, n_train, n_val)
    return Dataset(train, val, probe, input_dim, 2, "xent", seed)


def char_vocabulary(text: str = CHAR_CORPUS) -> List[str]:
    return sorted(set(text))


def char_lm(n_train: int, n_val: int, n_probe: int, context: int, seed: int, dtype, text: str = CHAR_CORPUS) -> Dataset:
    """Next-character prediction from a window of ``context`` one-hot characters.

    The input is the concatenation of the one-hot codes of the window, so the
    dense embedding acts as a position-aware lookup table. The last
    ``n_val + n_probe`` windows are held out and split into disjoint
    validation and probe sets; training windows come from the text before them.
    """
    vocab = char_vocabulary(text)
    index = {ch: i for i, ch in enumerate(vocab)}
    codes = np.array([index[ch] for ch in text], dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(codes[:-1], context)
    targets = codes[context:]
    v = len(vocab)
    x = np.zeros((len(targets), context * v), dtype=dtype)
    rows = np.arange(len(targets))[:, None]
    x[rows, np.arange(context) * v + windows] = 1.0
    held = n_val + n_probe
    if held >= len(targets):
        raise ConfigError(
            f"char-LM corpus has {len(targets)} windows; {n_val} validation plus {n_probe} probe windows leave none for training"
        )
    cut = len(targets) - held
    if cut < n_train:
        logger.warning(f"char-LM training pool has {cut} windows, fewer than n_train={n_train}")
    rng = np.random.default_rng([seed, 303])
    train_idx = rng.permutation(cut)[:n_train]
    held_idx = cut + rng.permutation(held)
    val_idx = held_idx[:n_val]
    probe_idx = held_idx[n_val:]
    return Dataset(
        train=Batch(x[np.sort(train_idx)], targets[np.sort(train_idx)]),
        val=Batch(x[np.sort(val_idx)], targets[np.sort(val_idx)]),
        probe=Batch(x[np.sort(probe_idx)], targets[np.sort(probe_idx)]),
        input_dim=context * v,
        output_dim=v,
        loss="xent",
        seed=seed,
    )


def _split(x: np.ndarray, y: np.ndarray, n_train: int, n_val: int) -> Tuple[Batch, Batch, Batch]:
    train = Batch(x[:n_train], y[:n_train])
    val = Batch(x[n_train:n_train + n_val], y[n_train:n_train + n_val])
    probe = Batch(x[n_train + n_val:], y[n_train + n_val:])
    return train, val, probe


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    """Dataset for a non-toy task described by ``cfg``."""
    dtype = np.dtype(cfg.dtype).type
    data, train = cfg.data, cfg.train
    task = Task(cfg.task)
    if task is Task.SYNTHETIC_REGRESSION:
        return synthetic_regression(
            data.n_train, data.n_val, train.probe_size, data.input_dim, data.output_dim, data.noise, cfg.seed, dtype
        )
    if task is Task.SYNTHETIC_CLASSIFICATION:
        return synthetic_classification(data.n_train, data.n_val, train.probe_size, data.input_dim, data.noise, cfg.seed, dtype)
    if task is Task.CHAR_LM_FFN:
        return char_lm(data.n_train, data.n_val, train.probe_size, data.context, cfg.seed, dtype)
    raise ConfigError(f"Task '{task.value}' has no training dataset")
