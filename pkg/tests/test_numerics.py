import math

import numpy as np
import pytest

from pwfn.errors import ConfigError, NumericalError, ShapeError
from pwfn.numerics import (NetworkSpec, Rng, SgdState, affine_backward, affine_forward, argmax_accuracy,
                           gaussian_draw, init_point_params, mlp_backward, mlp_forward, relu_backward,
                           relu_forward, sgd_momentum_update, softmax, softmax_cross_entropy)


def numeric_gradient(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + h
        upper = f()
        x[idx] = original - h
        lower = f()
        x[idx] = original
        grad[idx] = (upper - lower) / (2 * h)
    return grad


def test_affine_forward_identity():
    """Test identity weights pass the input through"""
    out = affine_forward([[1.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    assert np.array_equal(out, [[1.0, 2.0]])


def test_affine_forward_arithmetic():
    """Test a hand-computed affine map"""
    out = affine_forward([[1.0, 1.0]], [[2.0, 3.0], [4.0, 5.0]], [1.0, 1.0])
    assert np.array_equal(out, [[7.0, 9.0]])


def test_affine_forward_zero_input_passes_bias():
    """Test zero input yields the bias"""
    out = affine_forward([[0.0, 0.0]], np.random.default_rng(0).normal(size=(2, 2)), [5.0, -5.0])
    assert np.array_equal(out, [[5.0, -5.0]])


def test_affine_forward_shape_mismatch():
    """Test mismatched shapes raise ShapeError naming both shapes"""
    with pytest.raises(ShapeError) as excinfo:
        affine_forward(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))
    assert excinfo.value.left_shape == (1, 3)
    assert excinfo.value.right_shape == (2, 2)
    assert '(1, 3)' in str(excinfo.value)


def test_affine_forward_non_finite():
    """Test overflow to inf is reported as a numerical error"""
    with pytest.raises(NumericalError):
        affine_forward([[1e308, 1e308]], [[1e308], [1e308]], [0.0])


def test_affine_backward_single_path():
    """Test the single-path chain rule example"""
    grad_input, grad_w, grad_b = affine_backward([[1.0, 0.0]], [[1.0, 2.0]], np.eye(2))
    assert np.array_equal(grad_input, [[1.0, 0.0]])
    assert np.array_equal(grad_w, [[1.0, 0.0], [2.0, 0.0]])
    assert np.array_equal(grad_b, [1.0, 0.0])


def test_affine_backward_zero_grad():
    """Test zero upstream gradient gives zero gradients"""
    rng = np.random.default_rng(1)
    grads = affine_backward(np.zeros((3, 2)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))
    assert all(not np.any(g) for g in grads)


def test_affine_backward_finite_differences():
    """Test affine gradients against central differences on a 3x4 case"""
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=5)
    r = rng.normal(size=(3, 5))

    def loss():
        return float(np.sum(affine_forward(x, w, b) * r))

    grad_input, grad_w, grad_b = affine_backward(r, x, w)
    np.testing.assert_allclose(grad_input, numeric_gradient(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(grad_w, numeric_gradient(loss, w), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(grad_b, numeric_gradient(loss, b), rtol=1e-6, atol=1e-8)


def test_relu_forward_and_subgradient():
    """Test relu values and the zero subgradient at 0"""
    assert np.array_equal(relu_forward([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])
    assert np.array_equal(relu_backward([1.0, 1.0, 1.0], [-1.0, 0.0, 2.0]), [0.0, 0.0, 1.0])


def test_relu_finite_differences_away_from_kinks():
    """Test relu gradient against central differences away from 0"""
    rng = np.random.default_rng(3)
    x = rng.normal(size=200)
    x = x[np.abs(x) >= 1e-4]
    r = rng.normal(size=x.size)

    def loss():
        return float(np.sum(relu_forward(x) * r))

    np.testing.assert_allclose(relu_backward(r, x), numeric_gradient(loss, x), rtol=1e-6, atol=1e-8)


def test_softmax_cross_entropy_uniform():
    """Test equal logits give ln 2"""
    loss, _ = softmax_cross_entropy([[0.0, 0.0]], [0])
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_softmax_cross_entropy_saturated():
    """Test a saturated logit does not overflow"""
    loss, grad = softmax_cross_entropy([[100.0, 0.0]], [0])
    assert 0.0 <= loss <= 1e-6
    assert np.all(np.isfinite(grad))
    loss, _ = softmax_cross_entropy([[1000.0, -1000.0]], [1])
    assert loss == pytest.approx(2000.0)


def test_softmax_cross_entropy_translation_invariant():
    """Test adding a constant to each row leaves loss and gradient unchanged"""
    rng = Rng(21, 0)
    logits = rng.gaussian(24).reshape(8, 3)
    labels = [0, 1, 2, 2, 1, 0, 1, 2]
    shifts = rng.uniform_draw(8, -50.0, 50.0)[:, None]
    loss, grad = softmax_cross_entropy(logits, labels)
    moved_loss, moved_grad = softmax_cross_entropy(logits + shifts, labels)
    assert abs(moved_loss - loss) < 1e-9
    np.testing.assert_allclose(moved_grad, grad, atol=1e-12)


def test_softmax_cross_entropy_finite_differences():
    """Test the logit gradient against central differences"""
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    _, grad = softmax_cross_entropy(logits, labels)
    numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits, h=1e-5)
    np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)


def test_softmax_cross_entropy_bad_label():
    """Test out-of-range labels are rejected"""
    with pytest.raises(ConfigError):
        softmax_cross_entropy([[0.0, 1.0]], [2])


def test_softmax_rows_sum_to_one():
    """Test softmax rows are distributions"""
    probs = softmax(np.random.default_rng(5).normal(size=(4, 3)) * 50)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_sgd_plain_step():
    """Test momentum 0 reduces to plain SGD"""
    param = np.zeros(1)
    state = SgdState.for_params([param], learning_rate=0.1, momentum=0.0)
    sgd_momentum_update([param], [np.ones(1)], state)
    assert param[0] == pytest.approx(-0.1)


def test_sgd_zero_gradient_keeps_param():
    """Test zero gradients from zero buffers leave the parameter alone"""
    param = np.array([0.3])
    state = SgdState.for_params([param], learning_rate=0.5)
    for _ in range(2):
        sgd_momentum_update([param], [np.zeros(1)], state)
    assert param[0] == 0.3


def test_sgd_momentum_two_steps():
    """Test two momentum steps reach -2.9"""
    param = np.zeros(1)
    state = SgdState.for_params([param], learning_rate=1.0, momentum=0.9)
    for _ in range(2):
        sgd_momentum_update([param], [np.ones(1)], state)
    assert param[0] == pytest.approx(-2.9)
    assert state.momentum_buffers[0][0] == pytest.approx(1.9)


def test_sgd_rejects_bad_settings():
    """Test invalid learning rate and momentum are config errors"""
    with pytest.raises(ConfigError):
        SgdState(learning_rate=0.0)
    with pytest.raises(ConfigError):
        SgdState(learning_rate=0.1, momentum=1.0)


def test_gaussian_stream_advances():
    """Test consecutive draws differ"""
    rng = Rng(42)
    assert not np.array_equal(gaussian_draw(rng, 5), gaussian_draw(rng, 5))


def test_gaussian_same_seed_identical():
    """Test the same seed reproduces the same vector"""
    assert np.array_equal(gaussian_draw(Rng(42), 7), gaussian_draw(Rng(42), 7))
    assert not np.array_equal(gaussian_draw(Rng(42, 0), 7), gaussian_draw(Rng(42, 1), 7))


def test_gaussian_statistics():
    """Test a million draws have mean 0 and variance 1"""
    draws = gaussian_draw(Rng(2024), 1_000_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 1.0) < 0.01


def test_rng_state_restores_stream():
    """Test restoring the saved state replays the same draws"""
    rng = Rng(9)
    rng.gaussian(3)
    saved = rng.state
    first = rng.gaussian(4)
    rng.state = saved
    assert np.array_equal(rng.gaussian(4), first)


def test_rng_rejects_bad_seed():
    """Test negative seeds are config errors"""
    with pytest.raises(ConfigError):
        Rng(-1)


def test_permutation_is_a_permutation():
    """Test permutation covers every index once"""
    order = Rng(1).permutation(50)
    assert sorted(order.tolist()) == list(range(50))


def test_uniform_draw_range():
    """Test uniform draws stay inside [low, high)"""
    values = Rng(3).uniform_draw(10_000, -2.0, 3.0)
    assert values.min() >= -2.0
    assert values.max() < 3.0


def test_network_spec_shapes():
    """Test parameter shapes and counts of a [2, 8, 8, 3] MLP"""
    spec = NetworkSpec((2, 8, 8, 3))
    assert spec.n_layers == 3
    assert spec.param_shapes()[0] == ('layer0.weight', (2, 8))
    assert spec.param_shapes()[1] == ('layer0.bias', (8,))
    assert spec.n_params == 2 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_network_spec_validation():
    """Test invalid layer lists are rejected"""
    with pytest.raises(ConfigError):
        NetworkSpec((4,))
    with pytest.raises(ConfigError):
        NetworkSpec((2, 0, 3))
    with pytest.raises(ConfigError):
        NetworkSpec((2, 3), activation='tanh')


def test_mlp_backward_finite_differences(small_spec):
    """Test whole-network gradients against central differences"""
    params = init_point_params(small_spec, Rng(8))
    params = [p + 0.01 * np.random.default_rng(i).normal(size=p.shape) for i, p in enumerate(params)]
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 2))
    y = rng.integers(0, 3, size=5)

    def loss():
        logits, _ = mlp_forward(small_spec, params, x)
        return softmax_cross_entropy(logits, y)[0]

    logits, cache = mlp_forward(small_spec, params, x)
    _, grad_logits = softmax_cross_entropy(logits, y)
    grads = mlp_backward(small_spec, params, cache, grad_logits)
    for param, grad in zip(params, grads):
        np.testing.assert_allclose(grad, numeric_gradient(loss, param, h=1e-6), rtol=1e-4, atol=1e-7)


def test_argmax_accuracy_ties_to_lowest_class():
    """Test equal logits resolve to class 0"""
    assert argmax_accuracy(np.zeros((4, 2)), [0, 1, 0, 1]) == 0.5
