"""Gradient-free episode classifiers built on the trained encoder."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.bench.episode_batch import EpisodeBatch
from src.core.errors import EmptyAfterCentering
from src.encoder.model import EncodedBatch, EncoderParams, encode_images, prototype_matrix
from src.matching.couplings import MatcherConfig
from src.matching.matchers import (CenteredSlots, bidirectional_assignment_score, blend_score,
                                   center_slots, chamfer_score, select_topk)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodePrediction:
    """Per-query predictions and the class score tables they came from.

    Score columns follow ``classes`` (ascending class ids).
    """
    classes: np.ndarray
    predictions: np.ndarray
    scores: np.ndarray
    holistic: np.ndarray
    chamfer: np.ndarray | None = None

    def accuracy(self, labels: np.ndarray) -> float:
        return float(np.mean(self.predictions == np.asarray(labels)))


def topk_slots(z: np.ndarray, omega: np.ndarray, kappa: int) -> CenteredSlots:
    """Centered projections of one image restricted to its κ most important slots.

    Raises:
        EmptyAfterCentering: If every selected slot was dropped by centering.
    """
    selected = center_slots(z).restrict(select_topk(omega, kappa))
    if len(selected) == 0:
        raise EmptyAfterCentering(f"all top-{kappa} slots vanished after centering")
    return selected


class BaseEpisodeClassifier:
    """Base class for episode classifiers.

    Subclasses implement :meth:`classify`. The shared helper computes the
    holistic score table s_hol(q, c) = τ·cos(e_q, P_c) on uncentered
    embeddings.
    """
    def __init__(self, params: EncoderParams, matcher: MatcherConfig | None = None):
        self.params = params
        self.matcher = matcher or MatcherConfig()

    def _holistic_scores(self, episode: EpisodeBatch, encoded: EncodedBatch) -> np.ndarray:
        n_support = episode.support_phi.shape[0]
        P, _, _ = prototype_matrix(encoded.e[:n_support], episode.support_labels, episode.classes)
        return self.params.head.tau * (encoded.e[n_support:] @ P.T)

    @staticmethod
    def _predict(classes: np.ndarray, scores: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lower class id on ties
        return classes[np.argmax(scores, axis=1)]

    def classify(self, episode: EpisodeBatch) -> EpisodePrediction:
        """Scores every query against every support class.

        Returns:
            EpisodePrediction: Predicted class per query plus the score tables.
        """
        raise NotImplementedError


class HolisticClassifier(BaseEpisodeClassifier):
    """Prototype-only baseline (equivalent to γ = 1)."""
    def classify(self, episode: EpisodeBatch) -> EpisodePrediction:
        encoded = encode_images(self.params, episode.all_phi())
        holistic = self._holistic_scores(episode, encoded)
        return EpisodePrediction(classes=episode.classes, predictions=self._predict(episode.classes, holistic),
                                 scores=holistic, holistic=holistic)


class ComposeClassifier(BaseEpisodeClassifier):
    """Blends holistic prototype scores with part-level slot matching."""
    def _part_scores(self, episode: EpisodeBatch, encoded: EncodedBatch) -> np.ndarray:
        kappa = self.matcher.kappa
        n_support = episode.support_phi.shape[0]
        slot_sets = [topk_slots(encoded.z[b], encoded.omega[b], kappa) for b in range(encoded.z.shape[0])]
        support_sets, query_sets = slot_sets[:n_support], slot_sets[n_support:]
        by_class = {int(c): [support_sets[b] for b in np.flatnonzero(episode.support_labels == c)]
                    for c in episode.classes}
        pools = {c: CenteredSlots.union(sets) for c, sets in by_class.items()}

        scores = np.zeros((len(query_sets), len(episode.classes)))
        for q, query in enumerate(query_sets):
            for j, c in enumerate(episode.classes):
                scores[q, j] = self._match(query, by_class[int(c)], pools[int(c)])
        return scores

    def _match(self, query: CenteredSlots, supports: list[CenteredSlots], pool: CenteredSlots) -> float:
        """Part score of one query against one class.

        Raises:
            ShapeError: For ``hungarian`` when centering left the query and a
                support image with different numbers of selected slots.
        """
        kind = self.matcher.kind
        if kind == "hard_chamfer":
            return chamfer_score(query, pool)
        if kind == "hungarian":
            # a permutation needs equal set sizes, so match image against image
            return float(np.mean([bidirectional_assignment_score(self.matcher, query, s) for s in supports]))
        return bidirectional_assignment_score(self.matcher, query, pool)

    def classify(self, episode: EpisodeBatch) -> EpisodePrediction:
        encoded = encode_images(self.params, episode.all_phi())
        holistic = self._holistic_scores(episode, encoded)
        chamfer = self._part_scores(episode, encoded)
        scores = blend_score(holistic, chamfer, self.matcher.gamma_blend, self.params.head.tau)
        return EpisodePrediction(classes=episode.classes, predictions=self._predict(episode.classes, scores),
                                 scores=scores, holistic=holistic, chamfer=chamfer)


def classify_episode(episode: EpisodeBatch, params: EncoderParams,
                     matcher_config: MatcherConfig | None = None) -> EpisodePrediction:
    """Full compositional inference on one episode.

    Raises:
        EmptyAfterCentering: If centering removes every selected slot of an image.
        ShapeError: For the ``hungarian`` matcher when centering leaves two
            images with different numbers of selected slots.
    """
    return ComposeClassifier(params, matcher_config).classify(episode)
