import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unideal.errors import GradientCheckError, InvalidInputError, ShapeError
from unideal.nn import (
    Batch,
    DenseLayer,
    GradientSet,
    backward,
    cross_entropy_loss,
    finite_diff_check,
    forward,
    forward_backward,
    init_layer,
    kl_divergence,
    sgd_step,
    softmax,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("c", [-700.0, 0.0, 3.5, 1e3])
    def test_constant_vector_is_uniform(self, c):
        np.testing.assert_allclose(softmax([c, c, c]), [1 / 3] * 3, atol=1e-12)

    def test_log_weights(self):
        p = softmax([math.log(1), math.log(2), math.log(3)])
        np.testing.assert_allclose(p, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_rows_of_matrix(self):
        p = softmax(np.array([[0.0, 0.0], [math.log(3), 0.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5], [0.75, 0.25]], atol=1e-12)

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 0.0]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            softmax(bad)

    @given(arrays(np.float64, st.integers(1, 8), elements=finite), finite)
    def test_sums_to_one_and_shift_invariant(self, x, c):
        p = softmax(x)
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) <= 1e-9
        np.testing.assert_allclose(softmax(x + c), p, atol=1e-9)


class TestKL:
    def test_identical(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-15)

    def test_zero_mass_convention(self):
        assert kl_divergence([1.0, 0.0], [1.0, 0.0]) == 0.0

    def test_hand_value(self):
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.5 * math.log(4 / 3), abs=1e-12)
        assert 0.5 * math.log(4 / 3) == pytest.approx(0.143841, abs=1e-6)

    def test_floor_keeps_finite(self):
        assert math.isfinite(kl_divergence([0.5, 0.5], [1.0, 0.0]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])

    @given(
        arrays(np.float64, 4, elements=st.floats(0, 10)),
        arrays(np.float64, 4, elements=st.floats(0, 10)),
    )
    def test_nonnegative_and_zero_on_self(self, a, b):
        if a.sum() == 0 or b.sum() == 0:
            return
        p, q = a / a.sum(), b / b.sum()
        assert kl_divergence(p, q) >= -1e-12
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = cross_entropy_loss([[0.0, 0.0]], [0])
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated(self):
        loss, _ = cross_entropy_loss([[1e3, 0.0, 0.0]], [0])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        loss, grad = cross_entropy_loss([[1.0, 2.0]], [1])
        assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert loss == pytest.approx(0.313262, abs=1e-6)
        p1 = 1 / (1 + math.exp(-1))
        np.testing.assert_allclose(grad, [[1 - p1, p1 - 1]], atol=1e-12)

    def test_gradient_is_mean_of_prob_minus_onehot(self, rng):
        z = rng.normal(size=(5, 4))
        y = np.array([0, 3, 1, 1, 2])
        _, grad = cross_entropy_loss(z, y)
        expected = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expected[np.arange(5), y] -= 1
        np.testing.assert_allclose(grad, expected / 5, atol=1e-12)

    @pytest.mark.parametrize("labels", [[2], [-1]])
    def test_out_of_range_label(self, labels):
        with pytest.raises(InvalidInputError):
            cross_entropy_loss([[0.0, 1.0]], labels)

    @given(arrays(np.float64, (3, 4), elements=finite), st.lists(st.integers(0, 3), min_size=3, max_size=3))
    def test_gradient_rows_sum_to_zero(self, z, y):
        _, grad = cross_entropy_loss(z, y)
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-9)


class TestForwardBackward:
    def test_identity_network(self):
        layer = DenseLayer(np.eye(3), np.zeros(3), "identity")
        x = np.array([[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]])
        acts = forward([layer], x)
        np.testing.assert_array_equal(acts[-1], x)

    def test_zero_upstream_gradient(self, rng):
        layers = [init_layer(3, 4, "relu", rng), init_layer(4, 2, "identity", rng)]
        batch = Batch(rng.normal(size=(5, 3)), np.zeros(5, dtype=int))
        _, grads = forward_backward(layers, batch, np.zeros((5, 2)))
        assert all(not g.any() for g in grads.weights + grads.biases)

    def test_dimension_mismatch(self, rng):
        layers = [init_layer(3, 4, "relu", rng), init_layer(5, 2, "identity", rng)]
        with pytest.raises(ShapeError):
            forward(layers, np.ones((1, 3)))

    def test_relu_derivative_zero_at_kink(self):
        layer = DenseLayer(np.array([[1.0]]), np.array([0.0]), "relu")
        acts = forward([layer], np.array([[0.0]]))
        grads, gx = backward([layer], acts, np.array([[1.0]]))
        assert grads.weights[0][0, 0] == 0.0 and gx[0, 0] == 0.0

    def test_two_layer_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        layers = [init_layer(3, 4, "relu", rng), init_layer(4, 3, "identity", rng)]
        for l in layers:
            l.biases[:] = rng.normal(scale=0.1, size=l.biases.shape)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 3, size=6)

        def evaluator(params):
            ls = [DenseLayer(params[2 * i], params[2 * i + 1], layers[i].activation) for i in range(2)]
            acts = forward(ls, x)
            loss, g = cross_entropy_loss(acts[-1], y)
            grads, _ = backward(ls, acts, g)
            return loss, [a for pair in zip(grads.weights, grads.biases) for a in pair]

        params = [a for l in layers for a in (l.weights, l.biases)]
        assert finite_diff_check(evaluator, params, 1e-5) < 1e-4


class TestSGD:
    def test_zero_lr(self, rng):
        layers = [init_layer(3, 2, "identity", rng)]
        grads = GradientSet([rng.normal(size=(2, 3))], [rng.normal(size=2)])
        out = sgd_step(layers, grads, 0.0)
        np.testing.assert_array_equal(out[0].weights, layers[0].weights)

    def test_zero_grad(self, rng):
        layers = [init_layer(3, 2, "identity", rng)]
        out = sgd_step(layers, GradientSet.zeros_like(layers), 0.7)
        np.testing.assert_array_equal(out[0].weights, layers[0].weights)
        np.testing.assert_array_equal(out[0].biases, layers[0].biases)

    def test_hand_arithmetic(self):
        layer = DenseLayer(np.array([[3.0]]), np.array([3.0]), "identity")
        out = sgd_step([layer], GradientSet([np.array([[6.0]])], [np.array([6.0])]), 0.1)
        assert out[0].weights[0, 0] == pytest.approx(2.4, abs=1e-12)
        assert out[0].biases[0] == pytest.approx(2.4, abs=1e-12)

    def test_shape_mismatch(self, rng):
        layers = [init_layer(3, 2, "identity", rng)]
        with pytest.raises(ShapeError):
            sgd_step(layers, GradientSet([np.zeros((3, 2))], [np.zeros(2)]), 0.1)


class TestFiniteDiffCheck:
    def test_quadratic(self):
        eps = 1e-3
        err = finite_diff_check(lambda p: (float(p[0][0] ** 2), [2 * p[0]]), [np.array([3.0])], eps)
        assert err <= 10 * eps**2

    def test_constant(self):
        assert finite_diff_check(lambda p: (1.5, [np.zeros_like(p[0])]), [np.ones(4)], 1e-4) == 0.0

    def test_non_finite_loss(self):
        with pytest.raises(GradientCheckError):
            finite_diff_check(lambda p: (float("nan"), [np.zeros(1)]), [np.zeros(1)], 1e-4)

    def test_detects_wrong_gradient(self):
        err = finite_diff_check(lambda p: (float(p[0][0] ** 2), [3 * p[0]]), [np.array([2.0])], 1e-5)
        # analytic 6 vs numeric 4 -> |6 - 4| / 4
        assert err == pytest.approx(0.5, rel=1e-6)


def test_batch_validation():
    with pytest.raises(ShapeError):
        Batch(np.ones((3, 2)), np.zeros(2))
    with pytest.raises(InvalidInputError):
        Batch(np.ones((0, 2)), np.zeros(0))


def test_glorot_bounds(rng):
    layer = init_layer(10, 6, "relu", rng)
    limit = math.sqrt(6 / 16)
    assert np.abs(layer.weights).max() <= limit
    assert not layer.biases.any()
