import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bnn.errors import DimensionError, NumericError, ParameterError
from bnn.tensor import Rng, matmul, reshape, rng_normal, softmax


def test_matmul_identity():
    b = np.array([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(matmul(np.eye(2), b), b)


def test_matmul_hand_computed():
    # 1*5+2*7, 1*6+2*8 / 3*5+4*7, 3*6+4*8
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_annihilator():
    assert np.array_equal(matmul(np.zeros((2, 3)), np.ones((3, 2))), np.zeros((2, 2)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_reshape_requires_equal_count():
    assert reshape(np.arange(6.0), (2, 3)).shape == (2, 3)
    with pytest.raises(DimensionError):
        reshape(np.arange(6.0), (4, 2))


def test_softmax_examples():
    assert np.allclose(softmax(np.zeros((1, 3))), 1 / 3, rtol=0, atol=1e-15)
    big = softmax(np.array([[1000.0, 0.0, 0.0]]))
    assert np.all(np.isfinite(big))
    assert big[0, 0] == pytest.approx(1.0, abs=1e-15)
    out = softmax(np.array([[math.log(2.0), 0.0]]))
    assert out[0] == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_softmax_rejects_non_finite(bad):
    with pytest.raises(NumericError):
        softmax(np.array([[0.0, bad]]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_softmax_rows_sum_to_one(logits):
    out = softmax(logits)
    assert np.all(out >= 0)
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_matmul_associative(m, k, l, n, seed):
    g = np.random.default_rng(seed)
    a, b, c = g.normal(size=(m, k)), g.normal(size=(k, l)), g.normal(size=(l, n))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    scale = np.abs(a).max() * np.abs(b).max() * np.abs(c).max() * k * l
    assert np.all(np.abs(left - right) <= 1e-9 * scale)


def test_rng_normal_degenerate():
    assert np.array_equal(rng_normal(Rng(7), 1.0, 0.0, 5), np.ones(5))


def test_rng_normal_mean_clt_bound():
    z = rng_normal(Rng(11), 0.0, 1.0, 10**6)
    assert abs(z.mean()) < 4 / math.sqrt(10**6)
    assert z.std() == pytest.approx(1.0, rel=0.005)


def test_rng_normal_negative_std():
    with pytest.raises(ParameterError):
        rng_normal(Rng(0), 0.0, -1.0, 3)


def test_rng_reproducible_sequences():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.uniform(10**5), b.uniform(10**5))
    assert np.array_equal(a.normal(10**5), b.normal(10**5))
    assert not np.array_equal(Rng(43).uniform(10), Rng(42).uniform(10))


def test_rng_uniform_range_and_box_muller_draw_count():
    u = Rng(3).uniform(10**5)
    assert u.min() >= 0.0 and u.max() < 1.0
    # an odd number of normals still consumes a whole uniform pair
    r = Rng(5)
    r.normal(3)
    ref = Rng(5)
    ref.uniform(4)
    assert np.array_equal(r.uniform(5), ref.uniform(5))


def test_spawn_is_deterministic_and_does_not_advance_parent():
    parent = Rng(9)
    c1 = parent.spawn(2).uniform(4)
    assert np.array_equal(c1, Rng(9).spawn(2).uniform(4))
    assert np.array_equal(parent.uniform(4), Rng(9).uniform(4))
    assert not np.array_equal(Rng(9).spawn(1).uniform(4), c1)


def test_permutation_is_a_permutation():
    p = Rng(0).permutation(1000)
    assert np.array_equal(np.sort(p), np.arange(1000))
