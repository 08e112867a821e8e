import dataclasses
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.bench.episode_batch import random_episode
from src.core.errors import ShapeError
from src.encoder.model import EncoderParams, RouterParams
from src.matching.classifier import ComposeClassifier, HolisticClassifier, classify_episode, topk_slots
from src.matching.couplings import MATCHER_KINDS, MatcherConfig
from src.matching.matchers import CenteredSlots
from src.numerics.tensor_core import RngState, random_orthogonal


class TestClassifiers(unittest.TestCase):

    def setUp(self):
        rng = RngState(0)
        self.params = EncoderParams.identity(8, 4, rng.spawn("init"), router_scale=0.5)
        self.episode = random_episode(rng.spawn("episode"), way=3, shot=2, queries=3, K=4, D=8, class_offset=10.0)

    def test_separated_classes_are_recognised(self):
        prediction = classify_episode(self.episode, self.params, MatcherConfig(kappa=3))
        self.assertEqual(prediction.accuracy(self.episode.query_labels), 1.0)
        self.assertEqual(prediction.scores.shape, (9, 3))
        self.assertEqual(prediction.chamfer.shape, (9, 3))

    def test_single_class_episode(self):
        episode = random_episode(RngState(1), way=1, shot=2, queries=4, K=4, D=8)
        prediction = classify_episode(episode, self.params)
        self.assertEqual(prediction.accuracy(episode.query_labels), 1.0)

    def test_gamma_one_matches_holistic(self):
        episode = random_episode(RngState(2), way=4, shot=2, queries=3, K=4, D=8, class_offset=0.5)
        compose = ComposeClassifier(self.params, MatcherConfig(gamma_blend=1.0)).classify(episode)
        holistic = HolisticClassifier(self.params).classify(episode)
        assert_array_equal(compose.predictions, holistic.predictions)

    def test_every_matcher_runs(self):
        for kind in MATCHER_KINDS:
            with self.subTest(kind=kind):
                prediction = classify_episode(self.episode, self.params, MatcherConfig(kind=kind, kappa=3))
                self.assertEqual(prediction.accuracy(self.episode.query_labels), 1.0)

    def test_ties_go_to_lower_class_id(self):
        classes = np.array([2, 5])
        assert_array_equal(ComposeClassifier._predict(classes, np.array([[1.0, 1.0]])), [2])

    def test_topk_slots_restricts_to_heaviest(self):
        z = RngState(3).normal(size=(5, 8))
        selected = topk_slots(z, np.array([0.1, 0.4, 0.2, 0.2, 0.1]), 2)
        self.assertEqual(selected.source_slot_ids, [1, 2])

    def test_predictions_invariant_under_global_rotation(self):
        episode = random_episode(RngState(4), way=4, shot=2, queries=3, K=4, D=8, class_offset=0.5)
        Q = random_orthogonal(8, RngState(5))
        rotated = dataclasses.replace(episode, support_phi=episode.support_phi @ Q.T,
                                      query_phi=episode.query_phi @ Q.T)
        # W2 = I throughout; the router either ignores the inputs or turns with them
        uniform = EncoderParams(RouterParams(np.zeros((4, 8)), np.zeros(4)), self.params.head)
        turned = EncoderParams(RouterParams(self.params.router.W1 @ Q.T, self.params.router.v), self.params.head)
        for kind in MATCHER_KINDS:
            config = MatcherConfig(kind=kind, kappa=3)
            for name, before_params, after_params in (("uniform", uniform, uniform),
                                                      ("turned", self.params, turned)):
                with self.subTest(kind=kind, router=name):
                    before = classify_episode(episode, before_params, config)
                    after = classify_episode(rotated, after_params, config)
                    assert_array_equal(after.predictions, before.predictions)
                    assert_allclose(after.scores, before.scores, atol=1e-9)

    def test_hungarian_needs_equal_slot_counts(self):
        rng = RngState(6)
        rows = rng.normal(size=(5, 8))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        query = CenteredSlots(z_hat=rows[:3], source_slot_ids=[0, 1, 2])
        support = CenteredSlots(z_hat=rows[3:], source_slot_ids=[0, 2])
        classifier = ComposeClassifier(self.params, MatcherConfig(kind="hungarian", kappa=3))
        with self.assertRaises(ShapeError):
            classifier._match(query, [support], support)


if __name__ == '__main__':
    unittest.main()
