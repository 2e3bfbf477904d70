"""Unit tests for training-dynamics diagnostics."""
import numpy as np
import pytest
from numpy.testing import assert_array_equal
from scipy import stats

from sste.diagnostics import (
    MaskTracker,
    aod,
    delta_f1_f2,
    ecdf,
    evaluated_at,
    gradients,
    loss_at,
    predicted_aod,
    snapshot_params,
    summarize,
)
from sste.engine import Batch, LayerOptions, OptimizerState, build_mlp, loss_and_grad, loss_eval, step
from sste.exceptions import EmptySampleError, ShapeError
from sste.models import LayerMode, StepTrace
from sste.projection import Mask

pytestmark = pytest.mark.unit


def test_aod_examples():
    assert aod(1.0, 0.4) == pytest.approx(0.6)
    assert aod(0.2, 0.3) == pytest.approx(-0.1)
    assert predicted_aod(np.array([1.0, 2.0]), np.array([1.0, 1.0]), np.array([0.0, 0.5])) == 2.0
    grads = {"a": np.array([1.0]), "b": np.array([[2.0, -1.0]])}
    before = {"a": np.array([0.0]), "b": np.array([[1.0, 1.0]])}
    after = {"a": np.array([-1.0]), "b": np.array([[0.0, 2.0]])}
    assert predicted_aod(grads, before, after) == 1.0 + 2.0 + 1.0


def test_predicted_aod_shape_mismatch():
    with pytest.raises(ShapeError):
        predicted_aod(np.ones(3), np.ones(4), np.zeros(4))


def test_ecdf_examples():
    """Test repeated values and the empty-sample error."""
    assert ecdf([3.0, 1.0, 2.0, 2.0]) == [(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]
    assert ecdf([5.0]) == [(5.0, 1.0)]
    with pytest.raises(EmptySampleError):
        ecdf([])


def test_ecdf_matches_scipy_ks_statistic(rng):
    """The sup distance between our ECDF and Φ equals scipy's KS statistic."""
    samples = rng.standard_normal(500)
    points = ecdf(samples)
    values = np.array([v for v, _ in points])
    upper = np.array([f for _, f in points])
    lower = np.concatenate([[0.0], upper[:-1]])
    cdf = stats.norm.cdf(values)
    distance = max(np.max(upper - cdf), np.max(cdf - lower))
    result = stats.kstest(samples, "norm")
    assert distance == pytest.approx(result.statistic, rel=1e-12)
    assert result.pvalue > 1e-3


def test_mask_tracker():
    tracker = MaskTracker()
    a = Mask(np.array([1, 1, 0, 0, 1, 0, 1, 0], dtype=bool))
    b = Mask(np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=bool))
    rate, flips, digests = tracker.update({"fc0": a})
    assert rate is None and flips is None
    assert digests == {"fc0": a.digest()}
    rate, flips, _ = tracker.update({"fc0": b})
    assert flips == 2
    assert rate == 0.25
    assert tracker.update({"fc0": b})[:2] == (0.0, 0)


def test_summarize_phases():
    """Early, final and mean flip rates, AoD sign fraction and its ECDF."""
    traces = [StepTrace(step=0, loss=1.0, aod=0.1)]
    traces += [StepTrace(step=k, loss=1.0, flip_rate=k / 100, aod=-0.1 if k % 4 == 0 else 0.1) for k in range(1, 20)]
    summary = summarize(traces, final_train_loss=0.5, val_loss=0.6, total_steps=20)
    assert summary.early_flip_rate == pytest.approx(0.01)
    assert summary.final_flip_rate == pytest.approx(0.185)
    assert summary.mean_flip_rate == pytest.approx(0.10)
    assert summary.negative_aod_fraction == pytest.approx(4 / 20)
    assert summary.aod_ecdf == [(-0.1, 0.2), (0.1, 1.0)]


def test_summarize_without_flips():
    summary = summarize([StepTrace(step=0, loss=1.0)], final_train_loss=1.0, val_loss=1.0, total_steps=1)
    assert summary.mean_flip_rate is None
    assert summary.negative_aod_fraction is None
    assert summary.aod_ecdf == []


@pytest.fixture
def regression(rng):
    x = rng.standard_normal((64, 8))
    return Batch(x=x, y=x @ rng.standard_normal((8, 2)))


def _one_step(net, batch, lr):
    w_k = snapshot_params(net)
    f_k = loss_and_grad(net, batch)
    grad = gradients(net)
    step(OptimizerState(lr=lr), net.parameters())
    w_k1 = snapshot_params(net)
    return f_k, grad, w_k, w_k1


def test_aod_mismatch_shrinks_quadratically(regression):
    """|AoD − predicted AoD| is second order in the learning rate for a smooth dense net."""
    mismatches = []
    for lr in (0.05, 0.005):
        net = build_mlp(8, [8], 2, LayerOptions(seed=0), activation="gelu")
        f_k, grad, w_k, w_k1 = _one_step(net, regression, lr)
        actual = aod(f_k, loss_eval(net, regression))
        mismatches.append(abs(actual - predicted_aod(grad, w_k, w_k1)))
    assert mismatches[1] < mismatches[0] / 20



def test_dense_descent_has_nonnegative_aod_and_shrinking_mismatch(regression):
    """On a least-squares head, every GD step lowers the loss and the relative AoD mismatch falls with α."""
    first_step, mean_mismatch = [], []
    for lr in (1e-1, 1e-2, 1e-3):
        net = build_mlp(8, [], 2, LayerOptions(seed=0))
        relative = []
        for _ in range(20):
            f_k, grad, w_k, w_k1 = _one_step(net, regression, lr)
            actual = aod(f_k, loss_eval(net, regression))
            predicted = predicted_aod(grad, w_k, w_k1)
            assert actual >= 0.0
            assert predicted > 0.0
            relative.append(abs(actual - predicted) / predicted)
        first_step.append(relative[0])
        mean_mismatch.append(float(np.mean(relative)))
    assert first_step[0] > first_step[1] > first_step[2]
    assert mean_mismatch[0] > mean_mismatch[1] > mean_mismatch[2]


def test_evaluated_at_restores_parameters(regression):
    net = build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.HARD_STE, seed=0))
    original = snapshot_params(net)
    zeros = {key: np.zeros_like(w) for key, w in original.items()}
    with evaluated_at(net, zeros):
        assert loss_eval(net, regression) == pytest.approx(float(np.mean(regression.y**2)))
    for key, w in snapshot_params(net).items():
        assert_array_equal(w, original[key])
    assert loss_at(net, original, regression) == loss_eval(net, regression)


def test_delta_f_decomposition(regression):
    """Equal masks give ΔF₁ = ΔF₂; the fixed-mask term evaluates w_{k+1} under m_k."""
    net = build_mlp(8, [8], 2, LayerOptions(mode=LayerMode.HARD_STE, seed=0))
    masks_k = net.masks()
    _, _, w_k, w_k1 = _one_step(net, regression, 1e-6)
    masks_k1 = net.masks()
    assert masks_k1["fc0"] == masks_k["fc0"]
    d1, d2 = delta_f1_f2(net, w_k, w_k1, masks_k, masks_k1, regression)
    assert d1 == d2
    assert d1 == pytest.approx(aod(loss_at(net, w_k, regression), loss_at(net, w_k1, regression)))

    flipped = {"fc0": Mask(~masks_k["fc0"].bits)}
    d1, d2 = delta_f1_f2(net, w_k, w_k1, masks_k, flipped, regression)
    f_start = loss_at(net, w_k, regression, masks_k)
    assert d1 == pytest.approx(f_start - loss_at(net, w_k1, regression, flipped))
    assert d2 == pytest.approx(f_start - loss_at(net, w_k1, regression, masks_k))
    assert d1 != pytest.approx(d2)
