"""Episode container shared by training, inference and the gradient lab."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.core.errors import ShapeError


@dataclass(frozen=True)
class EpisodeBatch:
    """N-way K-shot episode of slot aggregates.

    ``support_phi`` and ``query_phi`` are (B, K, D) stacks of unit-row slot
    aggregates; labels are integer class ids. Attention maps and patch labels
    are optional and only kept when slot purity is measured.
    """
    support_phi: np.ndarray
    support_labels: np.ndarray
    query_phi: np.ndarray
    query_labels: np.ndarray
    way: int = 0
    shot: int = 0
    queries_per_class: int = 0
    support_attn: list = field(default=None, repr=False)
    support_patch_labels: list = field(default=None, repr=False)

    def __post_init__(self):
        support_phi = np.asarray(self.support_phi, dtype=np.float64)
        query_phi = np.asarray(self.query_phi, dtype=np.float64)
        if support_phi.ndim != 3 or query_phi.ndim != 3:
            raise ShapeError("episode aggregates must be (B, K, D) stacks")
        if support_phi.shape[1:] != query_phi.shape[1:]:
            raise ShapeError(f"support slots {support_phi.shape[1:]} and query slots {query_phi.shape[1:]} differ")
        support_labels = np.asarray(self.support_labels, dtype=np.int64)
        query_labels = np.asarray(self.query_labels, dtype=np.int64)
        if support_labels.shape != (support_phi.shape[0],) or query_labels.shape != (query_phi.shape[0],):
            raise ShapeError("one label per support and per query image is required")
        missing = set(query_labels.tolist()) - set(support_labels.tolist())
        if missing:
            raise ValueError(f"query classes {sorted(missing)} have no support images")
        object.__setattr__(self, "support_phi", support_phi)
        object.__setattr__(self, "query_phi", query_phi)
        object.__setattr__(self, "support_labels", support_labels)
        object.__setattr__(self, "query_labels", query_labels)

    @property
    def classes(self) -> np.ndarray:
        """Class ids present in the support set, ascending."""
        return np.unique(self.support_labels)

    @property
    def num_slots(self) -> int:
        return self.support_phi.shape[1]

    @property
    def dim(self) -> int:
        return self.support_phi.shape[2]

    def all_phi(self) -> np.ndarray:
        """Support then query aggregates as one (B_s + B_q, K, D) stack."""
        return np.concatenate([self.support_phi, self.query_phi], axis=0)


def random_episode(rng, way: int = 2, shot: int = 2, queries: int = 2, K: int = 3, D: int = 8,
                   class_offset: float = 0.0) -> EpisodeBatch:
    """Episode of random unit-row aggregates, used by the gradient checks.

    With ``class_offset`` > 0 every class shares a random direction added to
    its slots, so episodes carry some class signal.
    """
    support, support_labels, query, query_labels = [], [], [], []
    for c in range(way):
        centre = class_offset * rng.normal(size=(K, D))
        for i in range(shot + queries):
            phi = rng.normal(size=(K, D)) + centre
            phi /= np.linalg.norm(phi, axis=1, keepdims=True)
            if i < shot:
                support.append(phi)
                support_labels.append(c)
            else:
                query.append(phi)
                query_labels.append(c)
    return EpisodeBatch(np.stack(support), np.array(support_labels), np.stack(query), np.array(query_labels),
                        way=way, shot=shot, queries_per_class=queries)
