import unittest

import numpy as np
from numpy.testing import assert_allclose

from src.core.errors import ShapeError
from src.encoder.losses import (DecorrelationConfig, ce_loss, correlation_matrix, cross_entropy,
                                decorrelation_loss, decorrelation_terms, off_diag_mean, spectral_penalty,
                                standardize)
from src.encoder.model import Prototype
from src.numerics.tensor_core import RngState, finite_diff_gradient, relative_error


class TestCrossEntropy(unittest.TestCase):

    def test_uniform_logits(self):
        loss, probs, _ = cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
        self.assertAlmostEqual(loss, np.log(4))
        assert_allclose(probs, np.full((2, 4), 0.25))

    def test_gradient_matches_finite_differences(self):
        logits = RngState(0).normal(size=(3, 5))
        targets = np.array([1, 4, 0])
        _, _, grad = cross_entropy(logits, targets)
        numeric = finite_diff_gradient(lambda x: cross_entropy(x.reshape(3, 5), targets)[0], logits.ravel())
        assert_allclose(grad.ravel(), numeric, atol=1e-8)

    def test_ce_loss_prefers_true_prototype(self):
        prototypes = [Prototype(0, np.array([1.0, 0.0])), Prototype(5, np.array([0.0, 1.0]))]
        good, _ = ce_loss(np.array([[1.0, 0.0]]), [0], prototypes, tau=10.0)
        bad, _ = ce_loss(np.array([[1.0, 0.0]]), [5], prototypes, tau=10.0)
        self.assertLess(good, bad)

    def test_ce_loss_unknown_label_raises(self):
        with self.assertRaises(ValueError):
            ce_loss(np.array([[1.0, 0.0]]), [9], [Prototype(0, np.array([1.0, 0.0]))], tau=1.0)


class TestStatistics(unittest.TestCase):

    def test_standardize_zero_mean_unit_std(self):
        Y = RngState(1).normal(size=(50, 4)) * np.array([1.0, 2.0, 0.5, 3.0]) + 7.0
        Y_hat, _, floored = standardize(Y)
        assert_allclose(Y_hat.mean(axis=0), np.zeros(4), atol=1e-12)
        assert_allclose(Y_hat.std(axis=0), np.ones(4), atol=1e-12)
        self.assertFalse(floored.any())

    def test_constant_dimension_is_floored(self):
        Y = np.column_stack([RngState(2).normal(size=10), np.ones(10)])
        _, scale, floored = standardize(Y, std_floor=1e-6)
        self.assertTrue(floored[1])
        self.assertEqual(scale[1], 1e-6)

    def test_single_row_raises(self):
        with self.assertRaises(ShapeError):
            standardize(np.ones((1, 3)))

    def test_correlation_of_independent_dims_is_small(self):
        C = correlation_matrix(RngState(3).normal(size=(5000, 3)))
        assert_allclose(np.diag(C), np.ones(3), atol=1e-12)
        self.assertLess(off_diag_mean(C), 0.05)

    def test_off_diag_mean(self):
        C = np.array([[1.0, -0.5], [0.25, 1.0]])
        self.assertAlmostEqual(off_diag_mean(C), 0.375)

    def test_spectral_penalty_of_orthonormal_rows(self):
        d = 6
        self.assertAlmostEqual(spectral_penalty(np.eye(d)), (d - 1) ** 2 / d)


class TestDecorrelationGradients(unittest.TestCase):

    def setUp(self):
        self.Y = RngState(4).normal(size=(12, 5)) * 0.4

    def check_kind(self, kind, **kwargs):
        config = DecorrelationConfig(kind=kind, lambda_d=0.7, **kwargs)
        _, grad = decorrelation_terms(config, self.Y)
        numeric = finite_diff_gradient(lambda x: decorrelation_loss(config, x.reshape(self.Y.shape)),
                                       self.Y.ravel())
        self.assertLess(relative_error(grad.ravel(), numeric), 1e-6)

    def test_cross_correlation_gradient(self):
        self.check_kind("cross_correlation")

    def test_vicreg_variance_gradient(self):
        self.check_kind("vicreg_variance")

    def test_spectral_gradient(self):
        self.check_kind("spectral")

    def test_lambda_scales_every_kind(self):
        for kind in ("cross_correlation", "vicreg_variance", "spectral"):
            one = decorrelation_loss(DecorrelationConfig(kind=kind, lambda_d=1.0), self.Y)
            half = decorrelation_loss(DecorrelationConfig(kind=kind, lambda_d=0.5), self.Y)
            self.assertAlmostEqual(half, 0.5 * one)

    def test_none_kind_is_zero(self):
        loss, grad = decorrelation_terms(DecorrelationConfig(kind="none"), self.Y)
        self.assertEqual(loss, 0.0)
        self.assertFalse(grad.any())

    def test_vicreg_inactive_above_margin(self):
        wide = RngState(5).normal(size=(200, 3)) * 5.0
        self.assertEqual(decorrelation_loss(DecorrelationConfig(kind="vicreg_variance", lambda_d=1.0), wide), 0.0)

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            DecorrelationConfig(kind="whitening")
        with self.assertRaises(ValueError):
            DecorrelationConfig(lambda_d=-1.0)


if __name__ == '__main__':
    unittest.main()
