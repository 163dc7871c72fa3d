import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from data_agent.nn_core import (
    DenseLayer,
    ProtocolError,
    SgdConfig,
    ShapeError,
    backward,
    cross_entropy_per_row,
    dense_forward,
    make_layer,
    network_forward,
    seeded_init,
    sgd_step,
    softmax_ce_logit_grad,
    softmax_rows,
)
from data_agent.propcheck import _fd_network, _near_relu_kink, fd_check

PROPS = settings(max_examples=100, deadline=None)
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_identity_layer_passthrough():
    layer = DenseLayer(np.eye(2), np.zeros(2), "identity")
    assert np.array_equal(dense_forward(layer, np.array([[3.0, -1.0]])), [[3.0, -1.0]])


def test_relu_and_sigmoid_activations():
    relu = DenseLayer(np.eye(2), np.zeros(2), "relu")
    assert np.array_equal(dense_forward(relu, np.array([[-2.0, 5.0]])), [[0.0, 5.0]])
    sig = DenseLayer(np.eye(1), np.zeros(1), "sigmoid")
    assert dense_forward(sig, np.array([[0.0]]))[0, 0] == 0.5


def test_sigmoid_extremes_stay_finite():
    sig = DenseLayer(np.eye(1), np.zeros(1), "sigmoid")
    out = dense_forward(sig, np.array([[-800.0], [800.0]]))
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(0.0) and out[1, 0] == pytest.approx(1.0)


def test_shape_mismatch_names_both_widths():
    layer = make_layer(3, 2, "relu", 0)
    with pytest.raises(ShapeError, match="2 columns.*expects 3"):
        dense_forward(layer, np.zeros((4, 2)))


def test_bad_activation_and_bias_shape_rejected():
    with pytest.raises(ValueError):
        DenseLayer(np.eye(2), np.zeros(2), "gelu")
    with pytest.raises(ShapeError):
        DenseLayer(np.eye(2), np.zeros(3))


def test_softmax_examples():
    assert np.allclose(softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    assert np.allclose(softmax_rows(np.full((1, 3), 123.4)), [[1 / 3] * 3])
    big = softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(big))
    assert big[0, 0] == pytest.approx(1.0) and big[0, 1] == pytest.approx(0.0, abs=1e-300)


def test_cross_entropy_examples():
    assert cross_entropy_per_row(np.array([[1.0, 0.0]]), [0])[0] == 0.0
    assert cross_entropy_per_row(np.full((1, 10), 0.1), [3])[0] == pytest.approx(math.log(10), abs=1e-9)
    assert cross_entropy_per_row(np.array([[0.5, 0.5]]), [1])[0] == pytest.approx(math.log(2), abs=1e-9)


def test_cross_entropy_floor_and_range_check():
    assert cross_entropy_per_row(np.array([[1.0, 0.0]]), [1])[0] == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError, match="row 1"):
        cross_entropy_per_row(np.full((2, 3), 1 / 3), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy_per_row(np.full((1, 3), 1 / 3), [-1])


def test_logit_gradient_example():
    g = softmax_ce_logit_grad(np.array([[0.6, 0.3, 0.1]]), [0])
    assert np.allclose(g, [[-0.4, 0.3, 0.1]])
    assert np.abs(g).sum() == pytest.approx(0.8, abs=1e-12)


def test_backward_base_case_weight_grad_is_input():
    layer = DenseLayer(np.array([[0.3, -0.7, 1.1]]), np.zeros(1), "identity")
    x = np.array([[2.0, -1.0, 0.5]])
    dense_forward(layer, x)
    backward([layer], np.ones((1, 1)))
    assert np.array_equal(layer.weight_grad, x)
    assert np.array_equal(layer.bias_grad, [1.0])


def test_zero_loss_gradient_gives_zero_grads():
    layers = [make_layer(4, 5, "tanh", 1), make_layer(5, 3, "identity", 2)]
    network_forward(layers, np.ones((2, 4)))
    backward(layers, np.zeros((2, 3)))
    assert all(not l.weight_grad.any() and not l.bias_grad.any() for l in layers)


def test_backward_without_forward_is_protocol_error():
    layers = [make_layer(2, 2, "relu", 0)]
    with pytest.raises(ProtocolError):
        backward(layers, np.zeros((1, 2)))
    network_forward(layers, np.ones((1, 2)))
    backward(layers, np.zeros((1, 2)))
    with pytest.raises(ProtocolError):
        backward(layers, np.zeros((1, 2)))


def test_uncached_forward_does_not_enable_backward():
    layers = [make_layer(2, 2, "relu", 0)]
    network_forward(layers, np.ones((1, 2)), cache=False)
    with pytest.raises(ProtocolError):
        backward(layers, np.zeros((1, 2)))


def test_two_layer_finite_differences():
    rng = np.random.default_rng(3)
    layers = _fd_network(rng, depth=2, width=16, in_dim=4, classes=3)
    x = rng.normal(size=(8, 4))
    while _near_relu_kink(layers, x):
        x = rng.normal(size=(8, 4))
    assert fd_check(layers, x, rng.integers(3, size=8)) <= 1e-4


@PROPS
@given(seed=st.integers(0, 2**32 - 1))
def test_finite_difference_property(seed):
    rng = np.random.default_rng(seed)
    depth, width = int(rng.integers(1, 4)), int(rng.integers(1, 33))
    in_dim, classes = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    layers = _fd_network(rng, depth, min(width, 8), in_dim, classes)
    x = rng.normal(size=(1, in_dim))
    while _near_relu_kink(layers, x):
        x = rng.normal(size=(1, in_dim))
    assert fd_check(layers, x, rng.integers(classes, size=1)) <= 1e-4


def test_sgd_examples():
    layer = DenseLayer(np.array([[1.0]]), np.zeros(1))
    layer.weight_grad[...] = 1.0
    sgd_step([layer], SgdConfig(0.1))
    assert layer.weight[0, 0] == pytest.approx(0.9, abs=1e-15)
    assert not layer.weight_grad.any()
    sgd_step([layer], SgdConfig(0.1))
    assert layer.weight[0, 0] == pytest.approx(0.9, abs=1e-15)


def test_momentum_two_steps():
    layer = DenseLayer(np.array([[1.0]]), np.zeros(1))
    cfg = SgdConfig(0.1, 0.9)
    for _ in range(2):
        layer.weight_grad[...] = 1.0
        sgd_step([layer], cfg)
    assert layer.weight[0, 0] == pytest.approx(0.71, abs=1e-12)


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(0.0)
    with pytest.raises(ValueError):
        SgdConfig(0.1, 1.0)


def test_seeded_init_examples():
    a, b = seeded_init((5, 100), 7), seeded_init((5, 100), 7)
    assert a.tobytes() == b.tobytes()
    assert np.all(np.abs(a) <= 0.1)
    assert not np.array_equal(a, seeded_init((5, 100), 8))


@PROPS
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)), elements=finite))
def test_softmax_rows_sum_to_one(logits):
    p = softmax_rows(logits)
    assert np.all(np.isfinite(p)) and np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


@PROPS
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)), elements=finite), st.data())
def test_cross_entropy_lower_bounds(logits, data):
    p = softmax_rows(logits)
    labels = np.array(data.draw(st.lists(st.integers(0, p.shape[1] - 1), min_size=len(p), max_size=len(p))))
    ce = cross_entropy_per_row(p, labels)
    assert np.all(ce >= 0)
    assert np.all(ce >= -np.log(p.max(axis=1)) - 1e-12)


@PROPS
@given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 5))
def test_forward_backward_deterministic(seed, rows):
    def run():
        layers = [make_layer(3, 6, "relu", seed), make_layer(6, 2, "sigmoid", seed + 1)]
        x = np.random.default_rng(seed).normal(size=(rows, 3))
        out = network_forward(layers, x)
        gin = backward(layers, np.ones_like(out))
        return out.tobytes() + gin.tobytes() + layers[0].weight_grad.tobytes()

    assert run() == run()
