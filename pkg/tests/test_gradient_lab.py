import unittest

import numpy as np
from numpy.testing import assert_allclose

from src.analysis.gradient_lab import (GradientField, alignment_metric, assignment_grad, chamfer_grad,
                                       chamfer_query_field, chamfer_rank_genericity, cost_assumptions,
                                       episode_query_fields, field_alignment, field_rank, holistic_grad,
                                       genericity_construction, holistic_rank_configs, matched_unit_sets,
                                       random_margin_costs, sinkhorn_limit_probe, soft_beta_sweep)
from src.bench.episode_batch import random_episode
from src.encoder.model import EncoderParams
from src.matching.couplings import MatcherConfig, cost_matrix, hard_coupling
from src.matching.matchers import center_rows, chamfer_score, select_topk
from src.numerics.tensor_core import RngState, finite_diff_gradient, l2_normalize, normalize_rows


class TestHolisticField(unittest.TestCase):

    def test_raw_field_has_rank_one_and_matches_finite_differences(self):
        for field_, data in holistic_rank_configs(5, 4, 6, RngState(0)):
            self.assertEqual(field_rank(field_).numerical_rank, 1)

            def score(x):
                return float(l2_normalize(data["omega"] @ x.reshape(4, 6)) @ data["P"])

            numeric = finite_diff_gradient(score, data["y_raw"].ravel()).reshape(4, 6)
            assert_allclose(field_.per_slot, numeric, atol=1e-8)
            self.assertAlmostEqual(field_alignment(field_), 1.0, places=12)

    def test_unit_reference_needs_raw_projections(self):
        e = l2_normalize(np.ones(3))
        with self.assertRaises(ValueError):
            holistic_grad(e, e, np.array([0.5, 0.5]), e, reference="unit")


class TestChamferField(unittest.TestCase):

    def test_construction_is_exact_and_full_rank(self):
        z_q, z_c = genericity_construction(16, 7, np.pi / 4)
        field_ = chamfer_grad(z_q, z_c)
        expected = (np.sin(np.pi / 4) / 7) * np.eye(16)[7:14]
        assert_allclose(field_.per_slot, expected, atol=1e-15)
        self.assertEqual(field_rank(field_).numerical_rank, 7)
        self.assertAlmostEqual(field_alignment(field_), 0.0, places=12)

    def test_construction_needs_room(self):
        with self.assertRaises(ValueError):
            genericity_construction(10, 7)

    def test_direct_hard_assignment_equals_chamfer(self):
        z_q, z_c = matched_unit_sets(5, 8, 0.4, RngState(1))
        T = hard_coupling(cost_matrix(z_q, z_c))
        assert_allclose(assignment_grad(T, z_q, z_c).per_slot, chamfer_grad(z_q, z_c).per_slot)

    def test_full_hard_assignment_matches_analytic(self):
        z_q, z_c = matched_unit_sets(4, 8, 0.3, RngState(2))
        full = assignment_grad(None, z_q, z_c, "full", MatcherConfig(kind="hard_chamfer"))
        assert_allclose(full.per_slot, chamfer_grad(z_q, z_c).per_slot, atol=1e-8)

    def test_random_configurations_are_generically_full_rank(self):
        self.assertEqual(chamfer_rank_genericity(10, 5, 12, RngState(3)), 1.0)

    def test_full_mode_needs_config(self):
        z_q, z_c = matched_unit_sets(3, 4, 0.1, RngState(4))
        with self.assertRaises(ValueError):
            assignment_grad(None, z_q, z_c, "full")

    def test_query_field_matches_finite_differences(self):
        rng = RngState(5)
        K, D, kappa = 4, 6, 3
        z_q, _ = normalize_rows(rng.normal(size=(K, D)))
        omega = np.array([0.4, 0.1, 0.3, 0.2])
        pool, _ = normalize_rows(rng.normal(size=(5, D)))
        chosen = select_topk(omega, kappa)

        def score(x):
            z, _ = normalize_rows(x.reshape(K, D))
            z_hat, _, _ = center_rows(z)
            return chamfer_score(z_hat[chosen], pool)

        numeric = finite_diff_gradient(score, z_q.ravel()).reshape(K, D)
        assert_allclose(chamfer_query_field(z_q, omega, pool, kappa).per_slot, numeric, atol=1e-7)


class TestFieldUtilities(unittest.TestCase):

    def test_zero_field_has_rank_zero(self):
        self.assertEqual(field_rank(GradientField(np.zeros((3, 4)), "unit")).numerical_rank, 0)

    def test_non_finite_field_rejected(self):
        with self.assertRaises(ValueError):
            GradientField(np.array([[np.nan]]), "raw")

    def test_alignment_needs_two_rows(self):
        rows = np.zeros((3, 2))
        rows[0, 0] = 1.0
        with self.assertRaises(ValueError):
            field_alignment(GradientField(rows, "unit"))


class TestAlignmentMetric(unittest.TestCase):

    def setUp(self):
        rng = RngState(6)
        self.params = EncoderParams.identity(8, 4, rng.spawn("init"), router_scale=0.5)
        self.episodes = [random_episode(rng.spawn("episode", i), way=2, shot=2, queries=2, K=3, D=8,
                                        class_offset=1.0) for i in range(3)]

    def test_raw_holistic_fields_are_collinear(self):
        report = alignment_metric("holistic", self.params, self.episodes, reference="raw")
        self.assertAlmostEqual(report.mean_S, 1.0, places=10)
        self.assertEqual(report.episode_count, 3)
        self.assertEqual(report.pair_count, 3 * 4 * 3)

    def test_unit_reference_breaks_collinearity(self):
        report = alignment_metric("holistic", self.params, self.episodes, reference="unit")
        self.assertLess(report.mean_S, 1.0 - 1e-6)
        self.assertEqual(report.pairwise.shape, (3, 3))

    def test_ct_fields_have_one_row_per_slot(self):
        fields = episode_query_fields(self.params, self.episodes[0], "ct", kappa=2)
        self.assertEqual(len(fields), 4)
        self.assertEqual(fields[0].per_slot.shape, (3, 8))

    def test_unknown_score_kind_raises(self):
        with self.assertRaises(ValueError):
            episode_query_fields(self.params, self.episodes[0], "sinkhorn")

    def test_no_episodes_raises(self):
        with self.assertRaises(ValueError):
            alignment_metric("holistic", self.params, [])


class TestSinkhornProbe(unittest.TestCase):

    def test_margin_costs_satisfy_assumptions(self):
        S = random_margin_costs(7, 0.2, RngState(7))
        margin, collision_free = cost_assumptions(S)
        self.assertGreaterEqual(margin, 0.2)
        self.assertTrue(collision_free)

    def test_limits(self):
        S = random_margin_costs(5, 0.2, RngState(8))
        probe = sinkhorn_limit_probe(S, [100.0, 1.0, 0.1, 0.01])
        frame = probe.to_frame()
        self.assertTrue(probe.assumptions_hold)
        self.assertLess(frame.loc[0, "max_uniform_deviation"], 1e-3)
        self.assertGreater(frame.loc[3, "min_peak_mass"], 0.99)
        self.assertTrue(np.all(np.diff(frame["gradient_gap"]) <= 1e-12))

    def test_gap_on_slot_vectors(self):
        z_q, z_c = matched_unit_sets(4, 8, 0.05, RngState(9))
        probe = sinkhorn_limit_probe(cost_matrix(z_q, z_c), [1.0, 0.01], z_q, z_c)
        gaps = probe.to_frame()["gradient_gap"].to_numpy()
        self.assertLess(gaps[1], gaps[0])

    def test_soft_beta_sweep_reports_every_beta(self):
        frame = soft_beta_sweep([1.0, 10.0], 2, 3, 6, RngState(10))
        self.assertEqual(frame["beta"].tolist(), [1.0, 10.0])
        self.assertTrue(np.all(frame["relative_indirect"] >= 0))


if __name__ == '__main__':
    unittest.main()
