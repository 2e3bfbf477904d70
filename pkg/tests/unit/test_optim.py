"""Unit tests for optimizers and learning-rate schedules."""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sste.engine import (
    Batch,
    LayerOptions,
    OptimizerState,
    Parameter,
    SparseLinearLayer,
    build_mlp,
    loss_and_grad,
    lr_at,
    step,
)
from sste.exceptions import ConfigError
from sste.models import LayerMode

pytestmark = pytest.mark.unit


def test_constant_and_cosine_schedules():
    """Test the cosine schedule endpoints, midpoint and floor."""
    assert lr_at(7, 0.1, 10) == 0.1
    assert lr_at(0, 1.0, 10, "cosine") == 1.0
    assert lr_at(5, 1.0, 10, "cosine") == pytest.approx(0.5)
    assert lr_at(10, 1.0, 10, "cosine") == pytest.approx(0.0)
    assert lr_at(10, 1.0, 10, "cosine", min_lr_ratio=0.1) == pytest.approx(0.1)
    assert lr_at(50, 1.0, 10, "cosine", min_lr_ratio=0.1) == pytest.approx(0.1)
    lrs = [lr_at(k, 1.0, 20, "cosine") for k in range(21)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_linear_warmup():
    assert lr_at(0, 1.0, 10, "cosine", warmup_steps=4) == 0.25
    assert lr_at(3, 1.0, 10, "cosine", warmup_steps=4) == 1.0
    assert lr_at(4, 1.0, 10, "cosine", warmup_steps=4) == 1.0
    assert lr_at(1, 0.2, 10, "constant", warmup_steps=2) == pytest.approx(0.2)


def test_sgd_step():
    param = Parameter("p", np.array([1.0, -2.0]))
    param.grad = np.array([0.5, 1.0])
    old = param.w
    lr = step(OptimizerState(lr=0.1), [param])
    assert lr == 0.1
    assert_allclose(param.w, [0.95, -2.1])
    assert_array_equal(old, [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    """Bias correction makes the first Adam step lr·sign(g)."""
    param = Parameter("p", np.array([1.0, 1.0, 1.0]))
    param.grad = np.array([3.0, -0.01, 0.0])
    opt = OptimizerState(kind="adam", lr=0.01)
    step(opt, [param])
    assert_allclose(param.w, [0.99, 1.01, 1.0], atol=1e-6)
    assert opt.t == 1
    assert set(opt.exp_avg) == {"p"}


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_learning_rate_leaves_weights_unchanged(kind, rng):
    net = build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.S_STE, seed=1))
    batch = Batch(x=rng.standard_normal((16, 8)), y=rng.standard_normal((16, 2)))
    before = [param.w.copy() for param in net.parameters()]
    opt = OptimizerState(kind=kind, lr=0.0)
    for _ in range(3):
        loss_and_grad(net, batch)
        step(opt, net.parameters())
    for old, param in zip(before, net.parameters()):
        assert_array_equal(param.w, old)


def test_sr_ste_without_decay_matches_hard_ste(rng):
    """SR-STE with λ_W = 0 follows the hard-STE trajectory exactly."""
    batch = Batch(x=rng.standard_normal((32, 8)), y=rng.standard_normal((32, 2)))
    nets = [
        build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.HARD_STE, seed=4)),
        build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.SR_STE, lambda_w=0.0, seed=4)),
    ]
    for net in nets:
        opt = OptimizerState(lr=0.05)
        for _ in range(10):
            loss_and_grad(net, batch)
            step(opt, net.parameters())
    for a, b in zip(nets[0].parameters(), nets[1].parameters()):
        assert_array_equal(a.w, b.w)


def test_sr_ste_decay_shrinks_pruned_weights(rng):
    """The decayed run differs from the undecayed one by lr·λ_W·w on pruned entries only."""
    batch = Batch(x=rng.standard_normal((32, 8)), y=rng.standard_normal((32, 2)))
    plain = build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.SR_STE, lambda_w=0.0, seed=4))
    decayed = build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.SR_STE, lambda_w=0.5, seed=4))
    pruned = plain.masks()["fc0"].complement
    w0 = plain.sparse_layers[0].weight.w.copy()
    for net in (plain, decayed):
        loss_and_grad(net, batch)
        step(OptimizerState(lr=0.1), net.parameters())
    diff = decayed.sparse_layers[0].weight.w - plain.sparse_layers[0].weight.w
    assert_allclose(diff[~pruned], 0.0, atol=1e-15)
    assert_allclose(diff[pruned], -0.1 * 0.5 * w0[pruned], rtol=1e-9)



def test_sr_ste_decay_drives_pruned_weights_to_zero():
    """With no data gradient, a large λ_W shrinks pruned entries every step and leaves kept ones alone."""
    layer = SparseLinearLayer("fc0", 8, 4, mode=LayerMode.SR_STE, lambda_w=1.0, rng=np.random.default_rng(7))
    w0 = layer.weight.w.copy()
    x = np.zeros((4, 8))
    opt = OptimizerState(lr=0.1)
    pruned = None
    previous = np.abs(w0)
    for _ in range(50):
        layer.weight.zero_grad()
        layer.forward(x)
        layer.backward(np.ones((4, 4)))
        if pruned is None:
            pruned = layer.weight.decay_mask.astype(bool)
        assert_array_equal(layer.weight.decay_mask.astype(bool), pruned)
        step(opt, [layer.weight])
        current = np.abs(layer.weight.w)
        assert (current[pruned] <= previous[pruned]).all()
        previous = current
    assert pruned.any()
    assert_array_equal(layer.weight.w[~pruned], w0[~pruned])
    assert (np.abs(layer.weight.w[pruned]) < 0.01 * np.abs(w0[pruned])).all()

@pytest.mark.parametrize(
    "kwargs",
    [{"lr": -1.0}, {"beta1": 1.0}, {"beta2": -0.1}, {"eps": 0.0}, {"min_lr_ratio": 1.5}, {"kind": "lion"}],
)
def test_invalid_optimizer_settings(kwargs):
    with pytest.raises((ConfigError, ValueError)):
        OptimizerState(**kwargs)
