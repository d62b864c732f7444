import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from arnet.tensor import (RngStream, ShapeError, activations, affine, init_uniform, log_softmax, sigmoid,
                          softmax, tanh)

finite = st.floats(-50, 50, allow_nan=False)


def test_affine_identity():
    assert np.array_equal(affine(np.eye(2), [3, -1], [0, 0]), [3, -1])


def test_affine_zero_map():
    assert np.array_equal(affine(np.zeros((2, 2)), [7.5, -2.0], [1, 2]), [1, 2])


def test_affine_hand_dot_products():
    assert np.array_equal(affine([[1, 2], [3, 4]], [1, 1], [0, 0]), [3, 7])


def test_affine_batched_rows_match_single():
    r = RngStream(0)
    W, b, X = r.uniform(-1, 1, (3, 4)), r.uniform(-1, 1, 3), r.uniform(-1, 1, (5, 4))
    out = affine(W, X, b)
    for k in range(5):
        np.testing.assert_allclose(out[k], affine(W, X[k], b), rtol=0, atol=1e-15)


@pytest.mark.parametrize("W,x,b", [(np.zeros((2, 3)), np.zeros(2), np.zeros(2)),
                                   (np.zeros((2, 3)), np.zeros(3), np.zeros(3)),
                                   (np.zeros(3), np.zeros(3), np.zeros(1))])
def test_affine_shape_errors_name_the_shapes(W, x, b):
    with pytest.raises(ShapeError):
        affine(W, x, b)


def test_sigmoid_and_tanh_fixed_points():
    assert np.array_equal(sigmoid([0, 0]), [0.5, 0.5])
    assert np.array_equal(tanh([0]), [0])


def test_sigmoid_closed_form_ln3():
    assert sigmoid([math.log(3)])[0] == pytest.approx(0.75, abs=1e-15)


def test_activations_dispatch():
    x = np.array([-1.0, 0.3])
    assert np.array_equal(activations(x, "sigmoid"), sigmoid(x))
    assert np.array_equal(activations(x, "tanh"), tanh(x))
    with pytest.raises(ValueError):
        activations(x, "relu")


@given(arrays(np.float64, 6, elements=finite))
def test_sigmoid_matches_logistic_and_symmetry(x):
    ref = np.array([1.0 / (1.0 + math.exp(-v)) for v in x])
    np.testing.assert_allclose(sigmoid(x), ref, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


def test_softmax_examples():
    assert np.array_equal(softmax([0, 0, 0, 0]), [0.25] * 4)
    big = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == 1.0 and big[1] < 1e-300
    np.testing.assert_allclose(softmax(np.log([1, 2, 3])), [1 / 6, 2 / 6, 3 / 6], rtol=0, atol=1e-15)


@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(x, c):
    p = softmax(x)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p >= 0)
    np.testing.assert_allclose(softmax(x + c), p, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(x)), p, atol=1e-12)


def test_init_uniform_deterministic_per_seed():
    a = init_uniform(3, 4, 0.08, RngStream(1))
    b = init_uniform(3, 4, 0.08, RngStream(1))
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 0.08)


def test_init_uniform_mean_large_sample():
    w = init_uniform(100, 100, 0.1, RngStream(5))
    assert abs(w.mean()) < 0.005
    assert np.all(np.abs(w) <= 0.1)


def test_init_uniform_empty_consumes_no_draws():
    r = RngStream(9)
    w = init_uniform(0, 5, 0.1, r)
    assert w.shape == (0, 5)
    assert r.random() == RngStream(9).random()


def test_init_uniform_rejects_nonpositive_bound():
    with pytest.raises(ValueError):
        init_uniform(2, 2, 0.0, RngStream(0))


def test_fork_is_deterministic_independent_and_does_not_advance():
    r = RngStream(3)
    a, b = r.fork("shuffle"), r.fork("shuffle")
    assert np.array_equal(a.random(5), b.random(5))
    assert not np.array_equal(r.fork("noise").random(5), RngStream(3).fork("shuffle").random(5))
    assert r.random() == RngStream(3).random()


def test_rng_state_round_trip():
    r = RngStream(11)
    r.random(7)
    state = r.get_state()
    expected = r.random(4)
    other = RngStream(0)
    other.set_state(state)
    assert np.array_equal(other.random(4), expected)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_rng_rejects_out_of_range_seed(seed):
    with pytest.raises(ValueError):
        RngStream(seed)
