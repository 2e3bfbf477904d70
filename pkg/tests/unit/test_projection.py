"""Unit tests for the N:M pruning functions."""
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sste.exceptions import NonFiniteError, ShapeError
from sste.models import PruneConfig
from sste.projection import (
    Mask,
    MaskedTensor,
    block_threshold,
    flip_count,
    flip_rate,
    get_projection,
    hard_threshold,
    is_nm_valid,
    mask_of,
    soft_threshold,
)

pytestmark = pytest.mark.unit

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
blocks_2x4 = st.lists(finite, min_size=8, max_size=8).map(lambda v: np.array(v).reshape(2, 4))


def test_hard_threshold_examples(cfg12, cfg24):
    """Test the documented hard-threshold examples."""
    assert_array_equal(hard_threshold(np.array([1.0, 0.999]), cfg12).values, [1.0, 0.0])
    assert_array_equal(hard_threshold(np.array([0.999, 1.0]), cfg12).values, [0.0, 1.0])
    assert_array_equal(hard_threshold(np.array([1.0, 2.0, 3.0, 4.0]), cfg24).values, [0, 0, 3, 4])
    zero = hard_threshold(np.zeros(4), cfg24)
    assert_array_equal(zero.values, np.zeros(4))
    assert zero.mask.per_block().tolist() == [2]


def test_soft_threshold_examples(cfg12, cfg24):
    """Test the documented soft-threshold examples."""
    assert_array_equal(soft_threshold(np.array([1.0, 2.0, 3.0, 4.0]), cfg24).values, [0, 0, 1, 2])
    assert_allclose(soft_threshold(np.array([0.2, 0.1]), cfg12).values, [0.1, 0.0])
    assert_array_equal(soft_threshold(np.array([-4.0, 3.0, -2.0, 1.0]), cfg24).values, [-2, 1, 0, 0])
    for gamma in (0.0, 0.5, 1.0):
        cfg = PruneConfig(gamma=gamma)
        assert_array_equal(soft_threshold(np.full(4, 0.7), cfg).values, np.zeros(4))


def test_soft_threshold_gamma_interpolates_between_order_statistics():
    """γ=0 uses the (m-n)-th magnitude, γ=1 the next one up."""
    w = np.array([1.0, 2.0, 3.0, 4.0])
    assert block_threshold(w, PruneConfig(gamma=0.0)).tolist() == [2.0]
    assert block_threshold(w, PruneConfig(gamma=1.0)).tolist() == [3.0]
    assert block_threshold(w, PruneConfig(gamma=0.5)).tolist() == [2.5]
    assert_array_equal(soft_threshold(w, PruneConfig(gamma=1.0)).values, [0, 0, 0, 1])


def test_mask_of_examples(cfg12, cfg24):
    """Test mask extraction including the lowest-index tie break."""
    assert mask_of(np.array([1.0, 2.0, 3.0, 4.0]), cfg24).bits.tolist() == [False, False, True, True]
    assert mask_of(np.array([5.0, 5.0, 5.0, 5.0]), cfg24).bits.tolist() == [True, True, False, False]
    assert mask_of(np.array([0.2, 0.1]), cfg12).bits.tolist() == [True, False]
    assert mask_of(np.array([-3.0, 1.0, 3.0, 0.0]), cfg24).bits.tolist() == [True, False, True, False]


def test_flip_rate_examples():
    """Test flip rate on identical, complementary and partially different masks."""
    a = Mask(np.array([1, 0, 1, 0], dtype=bool))
    b = Mask(np.array([1, 0, 0, 1], dtype=bool))
    c = Mask(np.array([0, 1, 0, 1], dtype=bool))
    assert flip_rate(a, a) == 0.0
    assert flip_rate(a, c) == 1.0
    assert flip_rate(a, b) == 0.5
    assert flip_count(a, b) == 2


def test_flip_rate_shape_mismatch():
    a = Mask(np.zeros(4, dtype=bool))
    b = Mask(np.zeros(8, dtype=bool))
    with pytest.raises(ShapeError):
        flip_rate(a, b)


@pytest.mark.parametrize("project", [hard_threshold, soft_threshold, mask_of])
def test_rejects_non_divisible_length(project, cfg24):
    """Test that a last axis not divisible by m is rejected."""
    with pytest.raises(ShapeError):
        project(np.ones(6), cfg24)


@pytest.mark.parametrize("project", [hard_threshold, soft_threshold, mask_of])
def test_rejects_nan(project, cfg24):
    with pytest.raises(NonFiniteError):
        project(np.array([1.0, np.nan, 0.0, 2.0]), cfg24)


def test_blocks_run_along_last_axis(cfg24):
    """Each row of a 2-D weight is split into contiguous blocks of m."""
    w = np.arange(16, dtype=np.float64).reshape(2, 8)
    out = hard_threshold(w, cfg24).values
    expected = np.zeros_like(w)
    for col in (2, 3, 6, 7):
        expected[:, col] = w[:, col]
    assert_array_equal(out, expected)


def test_mask_and_masked_tensor_validation():
    """Masks with too many set bits and values outside the mask are rejected."""
    with pytest.raises(ShapeError):
        Mask(np.array([1, 1, 1, 0], dtype=bool))
    with pytest.raises(ShapeError):
        MaskedTensor(values=np.array([1.0, 0.0, 0.0, 1.0]), mask=Mask(np.array([1, 1, 0, 0], dtype=bool)))


def test_mask_digest_tracks_bits():
    a = Mask(np.array([1, 0, 1, 0, 0, 0, 1, 1], dtype=bool))
    b = Mask(np.array([1, 0, 1, 0, 0, 0, 1, 1], dtype=bool))
    c = Mask(np.array([0, 1, 1, 0, 0, 0, 1, 1], dtype=bool))
    assert a == b
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
    assert len(a.digest()) == 16


def test_projection_registry():
    """Test that registered projections report their metadata."""
    hard = get_projection("hard_threshold")
    soft = get_projection("soft_threshold")
    assert hard.get_metadata()["continuous"] is False
    assert soft.get_metadata()["continuous"] is True
    assert soft.get_metadata()["name"] == "soft_threshold"
    with pytest.raises(ValueError):
        get_projection("magnitude")


@given(blocks_2x4)
def test_both_projections_are_nm_valid(w):
    """Test that both projections keep at most n entries per block."""
    cfg = PruneConfig()
    assert is_nm_valid(hard_threshold(w, cfg).values, cfg)
    assert is_nm_valid(soft_threshold(w, cfg).values, cfg)
    assert (hard_threshold(w, cfg).nnz_per_block() <= 2).all()


@given(blocks_2x4, st.sampled_from([0.0, 0.33, 0.67, 1.0]))
def test_soft_threshold_preserves_sign_and_shrinks(w, gamma):
    """sign(S(w)_i) is 0 or sign(w_i) and |S(w)_i| <= |w_i|."""
    s = soft_threshold(w, PruneConfig(gamma=gamma)).values
    assert np.all((np.sign(s) == 0) | (np.sign(s) == np.sign(w)))
    assert np.all(np.abs(s) <= np.abs(w))


@given(blocks_2x4)
def test_support_is_idempotent(w):
    """Re-masking the kept values recovers the same mask when they are nonzero."""
    cfg = PruneConfig()
    projected = hard_threshold(w, cfg)
    assume(np.count_nonzero(projected.values) == 4)
    assert mask_of(projected.values, cfg) == projected.mask


@given(st.lists(finite, min_size=4, max_size=4, unique=True), st.permutations(range(4)))
def test_permutation_equivariance(values, perm):
    """Projecting a permuted block equals permuting the projected block."""
    a = np.array(values)
    assume(len(set(np.abs(a).tolist())) == 4)
    perm = np.array(perm)
    cfg = PruneConfig()
    for project in (hard_threshold, soft_threshold):
        assert_array_equal(project(a[perm], cfg).values, project(a, cfg).values[perm])


@settings(max_examples=200)
@given(blocks_2x4, blocks_2x4)
def test_soft_threshold_lipschitz_pairs(a, b):
    """‖S(a) − S(b)‖∞ ≤ 2‖a − b‖∞ per block for arbitrary pairs."""
    cfg = PruneConfig()
    lhs = np.abs(soft_threshold(a, cfg).values - soft_threshold(b, cfg).values).max(axis=1)
    rhs = 2 * np.abs(a - b).max(axis=1)
    assert np.all(lhs <= rhs + 1e-9)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
def test_soft_threshold_continuity_bound(gamma):
    """Over 10^5 random blocks and shrinking perturbations the 2δ bound never fails."""
    rng = np.random.default_rng(7)
    cfg = PruneConfig(gamma=gamma)
    a = rng.standard_normal((100_000, 4))
    # ties between magnitudes
    a[:5000, 1] = a[:5000, 2] * rng.choice([-1.0, 1.0], size=5000)
    for delta in 10.0 ** -np.arange(1, 9):
        b = a + rng.uniform(-delta, delta, size=a.shape)
        lhs = np.abs(soft_threshold(a, cfg).values - soft_threshold(b, cfg).values).max(axis=1)
        rhs = 2 * np.abs(a - b).max(axis=1)
        assert np.count_nonzero(lhs > rhs + 1e-12) == 0


def test_hard_threshold_discontinuity_witness(cfg12):
    """An arbitrarily small perturbation moves the hard-thresholded block by about 1."""
    for eps in (1e-3, 1e-6, 1e-9):
        a = np.array([1.0, 1.0 - eps])
        b = np.array([1.0 - eps, 1.0])
        assert np.abs(a - b).max() <= eps * (1 + 1e-6)
        jump = np.abs(hard_threshold(a, cfg12).values - hard_threshold(b, cfg12).values).max()
        assert jump >= 0.999
        soft_jump = np.abs(soft_threshold(a, cfg12).values - soft_threshold(b, cfg12).values).max()
        assert soft_jump <= 2 * eps * (1 + 1e-6)
