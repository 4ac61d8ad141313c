import numpy as np
import pytest
from helpers import central_difference, max_relative_error

from partmask_hub.core.exceptions import (
    InvalidParameterError,
    NonFiniteError,
    ShapeMismatchError,
)
from partmask_hub.core.tensor import (
    TaskLossKind,
    as_tensor,
    conv2d_backward,
    conv2d_forward,
    count_correct,
    encode_labels,
    fc_backward,
    fc_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    task_loss,
)


def naive_conv(x, weights, bias, stride, pad):
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    c_out, _, kh, kw = weights.shape
    out_h = (padded.shape[1] - kh) // stride + 1
    out_w = (padded.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                top, left = i * stride, j * stride
                window = padded[:, top : top + kh, left : left + kw]
                out[o, i, j] = np.sum(window * weights[o]) + bias[o]
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_forward_matches_loops(rng, stride, pad):
    x = rng.normal(size=(2, 7, 7))
    weights = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    out = conv2d_forward(x, weights, bias, stride=stride, pad=pad)
    np.testing.assert_allclose(out, naive_conv(x, weights, bias, stride, pad))


def test_conv_of_zero_input_is_bias():
    weights = np.ones((2, 1, 3, 3))
    out = conv2d_forward(np.zeros((1, 5, 5)), weights, np.array([0.5, -1.0]), pad=1)
    assert out.shape == (2, 5, 5)
    assert np.all(out[0] == 0.5) and np.all(out[1] == -1.0)


def test_conv_backward_matches_finite_differences(rng):
    x = rng.normal(size=(2, 2, 6, 6))
    weights = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    probe = rng.normal(size=(2, 3, 3, 3))

    def objective_x(value):
        return float(np.sum(probe * conv2d_forward(value, weights, bias, 2, 1)))

    def objective_w(value):
        return float(np.sum(probe * conv2d_forward(x, value, bias, 2, 1)))

    grad_x, grad_w, grad_b = conv2d_backward(probe, x, weights, stride=2, pad=1)
    assert max_relative_error(grad_x, central_difference(objective_x, x)) < 1e-6
    assert max_relative_error(grad_w, central_difference(objective_w, weights)) < 1e-6
    np.testing.assert_allclose(grad_b, probe.sum(axis=(0, 2, 3)))


def test_conv_rejects_channel_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        conv2d_forward(rng.normal(size=(3, 5, 5)), np.ones((1, 2, 3, 3)), np.zeros(1))


def test_relu_gradient_is_zero_at_zero():
    x = np.array([[-1.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu_forward(x), [[0.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu_backward(np.ones_like(x), x), [[0.0, 0.0, 1.0]])


def test_maxpool_tie_picks_first_row_major():
    x = np.array([[[1.0, 1.0], [1.0, 1.0]]])
    out, indices = maxpool_forward(x, 2)
    assert out[0, 0, 0] == 1.0
    assert indices[0, 0, 0] == 0
    grad = maxpool_backward(np.array([[[3.0]]]), indices, x.shape)
    np.testing.assert_array_equal(grad, [[[3.0, 0.0], [0.0, 0.0]]])


def test_maxpool_records_flat_index():
    x = np.arange(16, dtype=float).reshape(1, 4, 4)
    out, indices = maxpool_forward(x, 2, 2)
    np.testing.assert_array_equal(out[0], [[5.0, 7.0], [13.0, 15.0]])
    np.testing.assert_array_equal(indices[0], [[5, 7], [13, 15]])


def test_fc_backward_matches_finite_differences(rng):
    x = rng.normal(size=(4, 5))
    weights = rng.normal(size=(3, 5))
    bias = rng.normal(size=3)
    probe = rng.normal(size=(4, 3))
    grad_x, grad_w, grad_b = fc_backward(probe, x, weights)

    def objective(value):
        return float(np.sum(probe * fc_forward(value, weights, bias)))

    assert max_relative_error(grad_x, central_difference(objective, x)) < 1e-7
    np.testing.assert_allclose(grad_w, probe.T @ x)
    np.testing.assert_allclose(grad_b, probe.sum(axis=0))


@pytest.mark.parametrize("kind", list(TaskLossKind))
def test_task_loss_gradient(rng, kind):
    logits = rng.normal(size=(5, 4))
    labels = encode_labels([0, 3, 1, 1, 2], 4, kind)
    _, grad = task_loss(logits, labels, kind)

    def objective(value):
        return task_loss(value, labels, kind)[0]

    assert max_relative_error(grad, central_difference(objective, logits)) < 1e-7


def test_softmax_loss_of_uniform_logits():
    loss, _ = task_loss(np.zeros((2, 4)), np.array([0, 3]), TaskLossKind.SOFTMAX)
    assert loss == pytest.approx(np.log(4))


def test_negative_labels_only_for_logistic():
    signs = encode_labels([-1, 1], 3, TaskLossKind.LOGISTIC)
    np.testing.assert_array_equal(signs, [[-1, -1, -1], [-1, 1, -1]])
    with pytest.raises(InvalidParameterError):
        encode_labels([-1, 1], 3, TaskLossKind.SOFTMAX)


def test_count_correct_treats_all_negative_logits_as_negative_hit():
    logits = np.array([[-1.0, -2.0], [0.5, -1.0], [2.0, 1.0]])
    assert count_correct(logits, [-1, -1, 0], TaskLossKind.LOGISTIC) == 2
    assert count_correct(logits[1:], [0, 1], TaskLossKind.SOFTMAX) == 1


def test_sgd_step_with_momentum():
    params = {"w": np.array([1.0, 2.0])}
    grads = {"w": np.array([0.5, -1.0])}
    first, velocity = sgd_step(params, grads, lr=0.1, momentum=0.9)
    np.testing.assert_allclose(first["w"], [0.95, 2.1])
    second, _ = sgd_step(first, grads, lr=0.1, momentum=0.9, velocities=velocity)
    np.testing.assert_allclose(second["w"], [0.95 - 0.1 * 0.95, 2.1 + 0.1 * 1.9])
    np.testing.assert_array_equal(params["w"], [1.0, 2.0])


def test_sgd_zero_lr_leaves_params():
    params = {"w": np.array([1.0, 2.0])}
    updated, _ = sgd_step(params, {"w": np.array([3.0, 4.0])}, lr=0.0, momentum=0.5)
    np.testing.assert_array_equal(updated["w"], params["w"])


def test_sgd_rejects_non_finite_gradient():
    with pytest.raises(NonFiniteError):
        sgd_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, 0.1, 0.0)


def test_as_tensor_rejects_nan():
    with pytest.raises(NonFiniteError):
        as_tensor([1.0, np.inf])
