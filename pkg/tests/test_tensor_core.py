import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.core.errors import DegenerateVector, NonFiniteError, ShapeError
from src.numerics.tensor_core import (RngState, finite_diff_gradient, l2_normalize, normalize_rows,
                                      orthogonal_projector, random_orthogonal, relative_error, softmax,
                                      softmax_columns, sym_eig)


class TestRngState(unittest.TestCase):

    def test_same_seed_same_stream(self):
        a, b = RngState(42), RngState(42)
        assert_array_equal(a.normal(size=10), b.normal(size=10))

    def test_different_seeds_differ(self):
        self.assertFalse(np.allclose(RngState(1).normal(size=10), RngState(2).normal(size=10)))

    def test_spawn_depends_on_path_not_position(self):
        rng = RngState(7)
        child = rng.spawn("a", 1).normal(size=5)
        rng.normal(size=100)
        assert_array_equal(child, rng.spawn("a", 1).normal(size=5))
        self.assertFalse(np.allclose(child, rng.spawn("a", 2).normal(size=5)))

    def test_position_advances(self):
        rng = RngState(0)
        start = rng.position
        rng.normal(size=8)
        self.assertGreater(rng.position, start)


class TestSoftmax(unittest.TestCase):

    def test_columns_sum_to_one(self):
        logits = RngState(0).normal(size=(4, 6))
        assert_allclose(softmax_columns(logits).sum(axis=0), np.ones(6), atol=1e-12)

    def test_large_logits_are_stable(self):
        weights = softmax_columns(np.array([[1000.0], [999.0]]))
        assert_allclose(weights[:, 0], [1 / (1 + np.exp(-1)), np.exp(-1) / (1 + np.exp(-1))])

    def test_non_finite_logits_raise(self):
        with self.assertRaises(NonFiniteError):
            softmax_columns(np.array([[np.nan, 0.0], [1.0, 2.0]]))

    def test_softmax_any_axis(self):
        values = RngState(3).normal(size=(2, 3, 4))
        assert_allclose(softmax(values, axis=1).sum(axis=1), np.ones((2, 4)), atol=1e-12)


class TestNormalization(unittest.TestCase):

    def test_l2_normalize(self):
        assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_degenerate_vector_raises(self):
        with self.assertRaises(DegenerateVector):
            l2_normalize(np.zeros(3))

    def test_normalize_rows_flags_zero_rows(self):
        rows, degenerate = normalize_rows(np.array([[2.0, 0.0], [0.0, 0.0]]))
        assert_array_equal(degenerate, [False, True])
        assert_allclose(rows, [[1.0, 0.0], [0.0, 0.0]])

    def test_orthogonal_projector_annihilates_v(self):
        v = l2_normalize(np.array([1.0, 2.0, 2.0]))
        assert_allclose(orthogonal_projector(v) @ v, np.zeros(3), atol=1e-15)


class TestSymEig(unittest.TestCase):

    def test_reconstruction_and_order(self):
        G = RngState(5).normal(size=(6, 6))
        A = G @ G.T
        values, V = sym_eig(A)
        self.assertTrue(np.all(np.diff(values) <= 0))
        assert_allclose(V @ np.diag(values) @ V.T, A, atol=1e-9)
        assert_allclose(V.T @ V, np.eye(6), atol=1e-12)

    def test_matches_numpy(self):
        G = RngState(6).normal(size=(5, 5))
        A = G + G.T
        assert_allclose(sym_eig(A)[0], np.sort(np.linalg.eigvalsh(A))[::-1], atol=1e-10)

    def test_asymmetric_raises(self):
        with self.assertRaises(ValueError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_square_raises(self):
        with self.assertRaises(ShapeError):
            sym_eig(np.ones((2, 3)))


class TestRandomOrthogonal(unittest.TestCase):

    def test_orthogonal(self):
        Q = random_orthogonal(7, RngState(9))
        assert_allclose(Q @ Q.T, np.eye(7), atol=1e-12)


class TestFiniteDifferences(unittest.TestCase):

    def test_quadratic(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        x = np.array([0.5, -1.0])
        grad = finite_diff_gradient(lambda v: 0.5 * v @ A @ v, x)
        assert_allclose(grad, A @ x, rtol=1e-8)

    def test_non_finite_reports_coordinate(self):
        with self.assertRaises(NonFiniteError) as ctx:
            finite_diff_gradient(lambda v: np.log(v[1]), np.array([1.0, 1e-6]))
        self.assertEqual(ctx.exception.coordinate, 1)

    def test_relative_error(self):
        self.assertEqual(relative_error(np.ones(3), np.ones(3)), 0.0)
        self.assertAlmostEqual(relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])), 1.0)


if __name__ == '__main__':
    unittest.main()
