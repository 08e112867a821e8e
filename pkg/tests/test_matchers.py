import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.core.errors import EmptyAfterCentering
from src.matching.couplings import MatcherConfig
from src.matching.matchers import (CenteredSlots, bidirectional_assignment_score, blend_score, center_rows,
                                   center_slots, chamfer_score, chamfer_terms, select_topk)
from src.numerics.tensor_core import RngState


class TestCentering(unittest.TestCase):

    def test_rows_are_unit_and_centered(self):
        z = RngState(0).normal(size=(5, 4))
        centered = center_slots(z)
        assert_allclose(np.linalg.norm(centered.z_hat, axis=1), np.ones(5))
        self.assertEqual(centered.source_slot_ids, [0, 1, 2, 3, 4])

    def test_row_equal_to_mean_is_dropped(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]])
        centered = center_slots(z)
        self.assertEqual(centered.source_slot_ids, [0, 1])
        self.assertEqual(centered.dropped_ids, [2])

    def test_identical_rows_raise(self):
        with self.assertRaises(EmptyAfterCentering):
            center_slots(np.ones((3, 4)))

    def test_single_slot_raises(self):
        with self.assertRaises(ValueError):
            center_slots(np.ones((1, 4)))

    def test_vectorized_matches_per_image(self):
        z = RngState(1).normal(size=(3, 4, 5))
        z_hat, _, keep = center_rows(z)
        self.assertTrue(keep.all())
        for b in range(3):
            assert_allclose(z_hat[b], center_slots(z[b]).z_hat)

    def test_restrict_keeps_requested_order(self):
        centered = center_slots(RngState(2).normal(size=(4, 3)))
        restricted = centered.restrict([3, 1])
        self.assertEqual(restricted.source_slot_ids, [3, 1])
        assert_array_equal(restricted.z_hat, centered.z_hat[[3, 1]])

    def test_union_stacks_pools(self):
        a = center_slots(RngState(3).normal(size=(3, 2)))
        b = center_slots(RngState(4).normal(size=(2, 2)))
        pool = CenteredSlots.union([a, b])
        self.assertEqual(len(pool), 5)
        with self.assertRaises(ValueError):
            CenteredSlots.union([])


class TestTopK(unittest.TestCase):

    def test_descending_with_ties_to_lower_index(self):
        self.assertEqual(select_topk(np.array([0.2, 0.4, 0.2, 0.1, 0.1]), 3), [1, 0, 2])

    def test_kappa_larger_than_k_keeps_all(self):
        self.assertEqual(sorted(select_topk(np.array([0.5, 0.5]), 10)), [0, 1])


class TestChamfer(unittest.TestCase):

    def setUp(self):
        rng = RngState(5)
        A = rng.normal(size=(4, 6))
        B = rng.normal(size=(7, 6))
        self.A = A / np.linalg.norm(A, axis=1, keepdims=True)
        self.B = B / np.linalg.norm(B, axis=1, keepdims=True)

    def test_identical_sets_score_two(self):
        self.assertAlmostEqual(chamfer_score(self.A, self.A), 2.0)

    def test_score_is_bounded_and_symmetric(self):
        score = chamfer_score(self.A, self.B)
        self.assertTrue(-2.0 <= score <= 2.0)
        self.assertAlmostEqual(score, chamfer_score(self.B, self.A))

    def test_terms_use_nearest_neighbours(self):
        forward, backward, forward_idx, _ = chamfer_terms(self.A, self.B)
        S = self.A @ self.B.T
        assert_array_equal(forward_idx, np.argmax(S, axis=1))
        self.assertAlmostEqual(forward, S.max(axis=1).mean())
        self.assertAlmostEqual(backward, S.max(axis=0).mean())

    def test_hard_assignment_equals_chamfer(self):
        score = bidirectional_assignment_score(MatcherConfig(kind="hard_chamfer"), self.A, self.B)
        self.assertAlmostEqual(score, chamfer_score(self.A, self.B), places=12)

    def test_hard_assignment_equals_chamfer_on_random_sets(self):
        rng = RngState(6)
        config = MatcherConfig(kind="hard_chamfer")
        for i in range(1000):
            n_a, n_b, d = rng.integers(1, 6), rng.integers(1, 9), rng.integers(2, 7)
            A = rng.normal(size=(n_a, d))
            B = rng.normal(size=(n_b, d))
            A /= np.linalg.norm(A, axis=1, keepdims=True)
            B /= np.linalg.norm(B, axis=1, keepdims=True)
            self.assertAlmostEqual(bidirectional_assignment_score(config, A, B), chamfer_score(A, B), delta=1e-12)

    def test_soft_assignment_never_exceeds_hard(self):
        soft = bidirectional_assignment_score(MatcherConfig(kind="soft_chamfer", beta=5.0), self.A, self.B)
        self.assertLessEqual(soft, chamfer_score(self.A, self.B) + 1e-12)

    def test_empty_set_raises(self):
        with self.assertRaises(EmptyAfterCentering):
            chamfer_score(np.zeros((0, 6)), self.B)


class TestBlend(unittest.TestCase):

    def test_endpoints(self):
        self.assertEqual(blend_score(3.0, 0.5, 1.0, 10.0), 3.0)
        self.assertEqual(blend_score(3.0, 0.5, 0.0, 10.0), 5.0)

    def test_arrays(self):
        assert_allclose(blend_score(np.ones(2), np.zeros(2), 0.5, 2.0), [0.5, 0.5])

    def test_gamma_out_of_range_raises(self):
        with self.assertRaises(ValueError):
            blend_score(1.0, 1.0, 1.5, 1.0)


if __name__ == '__main__':
    unittest.main()
