import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import numeric_grad, rel_err
from lutlearn.errors import ConfigError
from lutlearn.grad import (Adam, BatchNormState, Tensor, batchnorm, conv2d, conv2d_forward, dense, dense_forward,
                           log_softmax, maxpool2d, optimizer_step, parameter, patches, softmax_cross_entropy, total)


def test_dense_forward_examples():
    assert dense_forward([[1, 0], [0, 1]], [3, 4]).tolist() == [3, 4]
    assert dense_forward([[1, 1]], [2, -2]).tolist() == [0]
    assert dense_forward([[0.5, -0.25], [1, 2]], [2, 4]).tolist() == [0, 10]


def test_dense_shape_mismatch():
    with pytest.raises(ConfigError):
        dense_forward(np.ones((2, 3)), np.ones(2))


def test_conv2d_forward_examples(rng):
    x = rng.normal(size=(5, 5))
    assert np.array_equal(conv2d_forward(np.ones((1, 1)), x), x)
    assert conv2d_forward(np.ones((2, 2)), np.array([[1.0, 2], [3, 4]])).tolist() == [[10]]
    assert conv2d_forward(np.ones((3, 3)), rng.normal(size=(5, 5)), stride=2).shape == (2, 2)


def test_conv2d_errors():
    with pytest.raises(ConfigError):
        conv2d_forward(np.ones((3, 3)), np.ones((2, 2)))
    with pytest.raises(ConfigError):
        conv2d_forward(np.ones((1, 1)), np.ones((2, 2)), stride=0)


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(2, 6, 5, 3))
    w = rng.normal(size=(4, 3, 3, 3))
    y = conv2d_forward(w, x, stride=2)
    ref = np.zeros((2, 2, 2, 4))
    for n in range(2):
        for i in range(2):
            for j in range(2):
                ref[n, i, j] = np.tensordot(w, x[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3], axes=3)
    assert np.allclose(y, ref)


def test_same_padding_keeps_size(rng):
    x = Tensor(rng.normal(size=(1, 5, 5, 2)))
    w = Tensor(rng.normal(size=(3, 3 * 3 * 2)))
    assert conv2d(x, w, 3, 3, padding="same").shape == (1, 5, 5, 3)


def test_sgd_examples():
    assert optimizer_step([parameter([1.0])], [np.array([1.0])], "sgd", 0.1)[0][0] == pytest.approx(0.9)
    assert optimizer_step([parameter([1.0])], [np.array([0.0])], "sgd", 0.1)[0][0] == 1.0


def test_adam_first_step_closed_form():
    # bias-corrected moments equal g and g^2, so the step is lr * g / (|g| + eps)
    out = optimizer_step([parameter([1.0])], [np.array([0.5])], "adam", 0.1)[0][0]
    assert out == pytest.approx(0.900000002, abs=1e-12)


def test_unknown_optimizer():
    with pytest.raises(ConfigError):
        optimizer_step([parameter([1.0])], [np.array([1.0])], "rmsprop", 0.1)


def _check(loss_fn, params, tol=1e-3):
    for p in params:
        p.grad = None
    loss_fn().backward()
    for p in params:
        num = numeric_grad(lambda: float(loss_fn().data), p.data)
        assert rel_err(p.grad, num) <= tol


def test_dense_gradients(rng):
    x = parameter(rng.normal(size=(4, 5)))
    w = parameter(rng.normal(size=(3, 5)))
    g = rng.normal(size=(4, 3))
    _check(lambda: total(dense(x, w) * Tensor(g)), [x, w])


@pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "valid"), (1, "same")])
def test_conv_gradients(rng, stride, padding):
    x = parameter(rng.normal(size=(2, 5, 5, 2)))
    w = parameter(rng.normal(size=(3, 3 * 3 * 2)))
    y0 = conv2d(x, w, 3, 3, stride, padding)
    g = rng.normal(size=y0.shape)
    _check(lambda: total(conv2d(x, w, 3, 3, stride, padding) * Tensor(g)), [x, w])


def test_patches_gradient(rng):
    x = parameter(rng.normal(size=(1, 4, 4, 2)))
    g = rng.normal(size=patches(x, 2, 2).shape)
    _check(lambda: total(patches(x, 2, 2) * Tensor(g)), [x])


def test_maxpool_gradient(rng):
    x = parameter(rng.normal(size=(2, 4, 4, 3)))
    g = rng.normal(size=(2, 2, 2, 3))
    _check(lambda: total(maxpool2d(x, 2) * Tensor(g)), [x])


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradient(rng, train):
    x = parameter(rng.normal(size=(6, 4)))
    s = parameter(rng.uniform(0.5, 1.5, size=4))
    b = parameter(rng.normal(size=4))
    g = rng.normal(size=(6, 4))

    def loss():
        st_ = BatchNormState(np.zeros(4) + 0.1, np.ones(4) * 1.3)
        return total(batchnorm(x, s, b, st_, train) * Tensor(g))
    _check(loss, [x, s, b])


def test_softmax_cross_entropy_gradient(rng):
    z = parameter(rng.normal(size=(5, 4)))
    y = rng.integers(0, 4, size=5)
    _check(lambda: softmax_cross_entropy(z, y), [z])


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.data())
def test_cross_entropy_on_one_hot(logits, data):
    z = np.array([logits])
    label = data.draw(st.integers(0, len(logits) - 1))
    p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    loss = float(softmax_cross_entropy(Tensor(z), np.array([label])).data)
    assert abs(loss - -np.log(p[0, label])) <= 1e-12 * max(1.0, abs(loss))


def test_log_softmax_stable():
    assert np.all(np.isfinite(log_softmax(np.array([[1e4, -1e4, 0.0]]))))


def test_forward_deterministic(rng):
    from lutlearn.model import Network

    x = rng.uniform(-1, 1, size=(8, 10))
    y = rng.integers(0, 3, size=8)
    losses = []
    for _ in range(2):
        net = Network(["dense:6", "bn", "dense:3", "bn"], (10,), seed=5)
        opt = Adam(net.parameters(), lr=1e-2)
        for _ in range(3):
            net.zero_grad()
            loss = softmax_cross_entropy(net.forward(x, train=True), y)
            loss.backward()
            opt.step()
        losses.append(float(loss.data))
    assert losses[0] == losses[1]
