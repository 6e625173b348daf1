"""Numeric kernel contracts: frozen examples, hostile-range properties,
and the finite-difference verifier's own examples."""

import math

import numpy as np
import pytest

from cogbert.errors import NumericError, ShapeError, ValidationError
from cogbert.numerics import (
    Parameter,
    SeededRng,
    cross_entropy,
    gelu,
    gelu_grad,
    grad_check,
    layer_norm,
    matmul,
    softmax_rows,
)
from cogbert.numerics import autodiff as ad


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_hand_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_associativity_on_random_matrices(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            a = rng.normal(size=(4, 5))
            b = rng.normal(size=(5, 3))
            c = rng.normal(size=(3, 6))
            np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)),
                                       rtol=0, atol=1e-9)


class TestSoftmaxRows:
    def test_symmetric_row(self):
        np.testing.assert_allclose(softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_closed_form(self):
        out = softmax_rows(np.array([[0.0, math.log(3.0)]]))
        np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-12)

    def test_mask_magnitude_underflows_cleanly(self):
        out = softmax_rows(np.array([[5.0, 5.0 - 10000.0]]))
        assert out[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert out[0, 1] < 1e-100
        assert np.isfinite(out).all()

    def test_nan_input_rejected(self):
        with pytest.raises(NumericError):
            softmax_rows(np.array([[0.0, float("nan")]]))

    def test_rows_sum_to_one_over_hostile_range(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            m = rng.uniform(-10000.0, 10000.0, size=(8, 16))
            out = softmax_rows(m)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-9)
            assert ((out >= 0) & (out <= 1)).all()


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_positive_asymptote(self):
        assert abs(gelu(10.0) - 10.0) < 1e-6

    def test_negative_asymptote(self):
        assert abs(gelu(-10.0)) < 1e-6

    def test_derivative_matches_central_difference(self):
        xs = np.linspace(-4.0, 4.0, 41)
        eps = 1e-6
        fd = (gelu(xs + eps) - gelu(xs - eps)) / (2 * eps)
        np.testing.assert_allclose(gelu_grad(xs), fd, atol=1e-8)


class TestLayerNorm:
    def test_constant_input_returns_beta(self):
        x = np.full(8, 3.7)
        out = layer_norm(x, np.ones(8), np.full(8, 1.5))
        np.testing.assert_allclose(out, 1.5)

    def test_unit_variance_input_passthrough(self):
        out = layer_norm(np.array([-1.0, 1.0]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-6)

    def test_zero_gamma_annihilates(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=16)
        beta = rng.normal(size=16)
        np.testing.assert_array_equal(layer_norm(x, np.zeros(16), beta), beta)

    def test_normalized_moments(self):
        rng = np.random.default_rng(9)
        x = rng.normal(2.0, 5.0, size=64)
        out = layer_norm(x, np.ones(64), np.zeros(64))
        assert abs(out.mean()) < 1e-12
        assert abs(out.var() - 1.0) < 1e-4  # eps-induced shrinkage only

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(np.zeros(4), np.zeros(3), np.zeros(4))


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert abs(cross_entropy(np.zeros(8), 3) - math.log(8)) < 1e-12

    def test_confident_correct(self):
        assert cross_entropy(np.array([100.0, 0.0]), 0) < 1e-12

    def test_confident_wrong(self):
        assert abs(cross_entropy(np.array([0.0, 100.0]), 0) - 100.0) < 1e-9

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            logits = rng.normal(size=5)
            assert cross_entropy(logits, int(rng.integers(5))) >= 0.0

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(np.zeros(3), 3)


class TestSeededRng:
    def test_same_seed_same_stream(self):
        a = SeededRng(123).normal(size=100)
        b = SeededRng(123).normal(size=100)
        np.testing.assert_array_equal(a, b)

    def test_derived_streams_differ_by_label(self):
        root = SeededRng(123)
        a = root.derive("alpha").normal(size=100)
        b = root.derive("beta").normal(size=100)
        assert not np.array_equal(a, b)

    def test_derivation_is_pure(self):
        assert SeededRng(5).derive("x").seed == SeededRng(5).derive("x").seed
        assert SeededRng(5).derive("x").seed != SeededRng(6).derive("x").seed


class TestGradCheck:
    def test_quadratic(self):
        w = Parameter("w", np.array([[3.0]]))

        def loss():
            return ad.matmul(ad.leaf(w), ad.leaf(w))  # w^2

        assert grad_check(loss, [w], eps=1e-5) < 1e-9
        assert w.grad[0, 0] == pytest.approx(6.0, abs=1e-12)

    def test_gelu_point(self):
        w = Parameter("w", np.array([[0.5]]))

        def loss():
            return ad.gelu(ad.leaf(w))

        assert grad_check(loss, [w], eps=1e-5) < 1e-6

    def test_eps_window_enforced(self):
        w = Parameter("w", np.array([[1.0]]))
        with pytest.raises(ValidationError):
            grad_check(lambda: ad.leaf(w), [w], eps=1e-2)

    def test_nonfinite_loss_raises(self):
        w = Parameter("w", np.array([[0.0]]))

        def loss():
            return ad.const(np.array([[float("inf")]]))

        with pytest.raises(NumericError):
            grad_check(loss, [w], eps=1e-5)
