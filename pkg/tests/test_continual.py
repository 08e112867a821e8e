import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
from numpy.testing import assert_array_equal

from src.bench.continual import ReplayBuffer, build_benchmark, run_continual_training
from src.config.experiment_config import ExperimentConfig
from src.core.errors import CheckFailure
from src.encoder.model import EncoderParams
from src.numerics.tensor_core import RngState

SMOKE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "smoke.yaml"


class TestReplayBuffer(unittest.TestCase):

    def test_capacity_per_class(self):
        buffer = ReplayBuffer(2)
        for i in range(3):
            buffer.add(5, np.full((2, 2), i))
        buffer.add(1, np.zeros((2, 2)))
        self.assertEqual(buffer.count(5), 2)
        self.assertEqual(len(buffer), 3)
        self.assertEqual(buffer.classes(), [1, 5])

    def test_sample_draws_stored_sets(self):
        buffer = ReplayBuffer(3)
        for i in range(3):
            buffer.add(0, np.full((1, 1), i))
        drawn = buffer.sample(0, 5, RngState(0))
        self.assertEqual(len(drawn), 5)
        self.assertTrue(all(d[0, 0] in (0, 1, 2) for d in drawn))

    def test_stored_sets_are_copies(self):
        buffer = ReplayBuffer(1)
        phi = np.zeros((1, 1))
        buffer.add(0, phi)
        phi[0, 0] = 9.0
        self.assertEqual(buffer.sample(0, 1, RngState(1))[0][0, 0], 0.0)

    def test_unknown_class_raises(self):
        with self.assertRaises(KeyError):
            ReplayBuffer(1).sample(3, 1, RngState(2))

    def test_capacity_validated(self):
        with self.assertRaises(ValueError):
            ReplayBuffer(0)


class TestContinualTraining(unittest.TestCase):

    def setUp(self):
        self.config = ExperimentConfig.load(SMOKE_CONFIG)

    def test_sessions_are_logged(self):
        on_status, on_session = MagicMock(), MagicMock()
        result = run_continual_training(self.config, on_status_message=on_status,
                                        on_session_complete=on_session)
        self.assertEqual(len(result.sessions), 2)
        self.assertEqual(len(result.loss_curve), 4)
        self.assertEqual(on_session.call_count, 2)
        self.assertEqual(on_status.call_count, 2)
        # replay holds two exemplars for each of the two classes per session
        self.assertEqual([s.replay_size for s in result.sessions], [4, 8])

    def test_training_is_deterministic(self):
        a = run_continual_training(self.config)
        b = run_continual_training(self.config)
        assert_array_equal(a.params.to_vector(), b.params.to_vector())

    def test_parameters_move(self):
        result = run_continual_training(self.config)
        root = RngState(self.config.seed)
        start = EncoderParams.identity(8, 4, root.spawn("init"))
        self.assertFalse(np.allclose(result.params.to_vector(), start.to_vector()))

    def test_changed_renderer_is_reported(self):
        fingerprints = iter([b"before", b"after"])
        with patch("src.bench.episodes.SceneRenderer.fingerprint", side_effect=lambda: next(fingerprints)):
            with self.assertRaises(CheckFailure):
                run_continual_training(self.config)

    def test_benchmark_matches_config(self):
        split, renderer = build_benchmark(self.config, RngState(0))
        self.assertEqual(len(split.sessions), 2)
        self.assertEqual(renderer.num_slots, 3)
        self.assertEqual(renderer.pool.dim, 8)


if __name__ == '__main__':
    unittest.main()
