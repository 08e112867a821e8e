import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.bench.concepts import SceneClass, build_pool, concept_pairs, render_scene
from src.numerics.tensor_core import RngState


class TestConceptPool(unittest.TestCase):

    def test_pairwise_overlap_is_bounded(self):
        pool = build_pool(6, 16, max_overlap=0.4, rng=RngState(0))
        directions = np.vstack([pool.concepts, pool.background])
        gram = np.abs(directions @ directions.T)
        np.fill_diagonal(gram, 0.0)
        self.assertLessEqual(gram.max(), 0.4)
        assert_allclose(np.linalg.norm(directions, axis=1), np.ones(7))

    def test_same_stream_same_pool(self):
        a = build_pool(4, 8, rng=RngState(1))
        b = build_pool(4, 8, rng=RngState(1))
        self.assertEqual(a.fingerprint(), b.fingerprint())

    def test_impossible_packing_raises(self):
        with self.assertRaises(ValueError):
            build_pool(10, 2, max_overlap=0.1, rng=RngState(2), max_retries=200)


class TestRenderScene(unittest.TestCase):

    def setUp(self):
        self.pool = build_pool(5, 12, max_overlap=0.5, rng=RngState(3))
        self.scene = SceneClass(0, (1, 3))

    def test_labels_and_shapes(self):
        features = render_scene(self.pool, self.scene, grid=(2, 2), patches_per_cell=3, rng=RngState(4))
        self.assertEqual(features.F.shape, (12, 12))
        labels, counts = np.unique(features.patch_labels, return_counts=True)
        assert_array_equal(labels, [0, 2, 4])
        assert_array_equal(counts, [6, 3, 3])
        assert_allclose(np.linalg.norm(features.F, axis=1), np.ones(12))

    def test_patches_stay_near_their_concept(self):
        features = render_scene(self.pool, self.scene, rng=RngState(5), spread=0.01)
        object_rows = features.patch_labels > 0
        cosines = np.sum(features.F[object_rows] * self.pool.concepts[features.patch_labels[object_rows] - 1], axis=1)
        self.assertTrue(np.all(cosines > 0.99))

    def test_too_many_concepts_for_grid_raises(self):
        with self.assertRaises(ValueError):
            render_scene(self.pool, SceneClass(1, (0, 1, 2)), grid=(1, 2), rng=RngState(6))

    def test_repeated_concept_rejected(self):
        with self.assertRaises(ValueError):
            SceneClass(2, (1, 1))

    def test_concept_pairs(self):
        self.assertEqual(concept_pairs([2, 0, 1]), [(0, 1), (0, 2), (1, 2)])
        self.assertEqual(len(concept_pairs(range(5), arity=3)), 10)


if __name__ == '__main__':
    unittest.main()
