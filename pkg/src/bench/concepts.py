"""Concept pools and feature-space scene composition.

A scene is a grid of patch cells: each concept of the scene occupies one
random cell, every other cell shows background. Patches are unit vectors,
so the frozen "backbone" is this renderer itself.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from src.config.config import AppConfig
from src.numerics.tensor_core import RngState, l2_normalize, normalize_rows
from src.vision.slot_attention import BACKGROUND_LABEL, PatchFeatures


@dataclass(frozen=True)
class ConceptPool:
    concepts: np.ndarray      # M×D unit rows
    background: np.ndarray    # unit D-vector
    spread: float = AppConfig.CONCEPT_SPREAD

    @property
    def size(self) -> int:
        return self.concepts.shape[0]

    @property
    def dim(self) -> int:
        return self.concepts.shape[1]

    def fingerprint(self) -> bytes:
        return self.concepts.tobytes() + self.background.tobytes()


@dataclass(frozen=True)
class SceneClass:
    class_id: int
    concept_ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(c) for c in self.concept_ids)
        if len(set(ids)) != len(ids):
            raise ValueError(f"class {self.class_id} repeats a concept: {ids}")
        object.__setattr__(self, "concept_ids", ids)


def _max_abs_cosine(candidate: np.ndarray, accepted: list[np.ndarray]) -> float:
    if not accepted:
        return 0.0
    return float(np.max(np.abs(np.stack(accepted) @ candidate)))


def build_pool(M: int, D: int, spread: float = AppConfig.CONCEPT_SPREAD,
               max_overlap: float = AppConfig.MAX_CONCEPT_OVERLAP, rng: RngState | None = None,
               max_retries: int = AppConfig.POOL_MAX_RETRIES) -> ConceptPool:
    """Rejection-samples M concept directions plus one background direction.

    Every pair among the M + 1 directions has |cos| ≤ ``max_overlap``.

    Raises:
        ValueError: If the packing cannot be completed within ``max_retries``
            draws.
    """
    if M < 1 or D < 1:
        raise ValueError(f"need M >= 1 and D >= 1, got M={M}, D={D}")
    rng = rng or RngState(AppConfig.SEED)
    accepted: list[np.ndarray] = []
    draws = 0
    while len(accepted) < M + 1:
        if draws >= max_retries:
            raise ValueError(
                f"could only place {len(accepted)} of {M + 1} directions with |cos| <= {max_overlap} "
                f"in D={D}; lower M or raise max_overlap"
            )
        draws += 1
        candidate = l2_normalize(rng.normal(size=D))
        if _max_abs_cosine(candidate, accepted) <= max_overlap:
            accepted.append(candidate)
    return ConceptPool(concepts=np.stack(accepted[:M]), background=accepted[M], spread=float(spread))


def render_scene(pool: ConceptPool, scene: SceneClass, grid: tuple[int, int] = AppConfig.GRID_SHAPE,
                 patches_per_cell: int = AppConfig.PATCHES_PER_CELL, noise: float = AppConfig.PATCH_NOISE,
                 rng: RngState | None = None, spread: float | None = None) -> PatchFeatures:
    """Patch tokens of one scene in raster cell order.

    Object patches are ``L2-norm(concept + N(0, spread²))`` and background
    patches ``L2-norm(background + N(0, noise²))``. Patch labels are the
    concept id plus one; background is 0.
    """
    rng = rng or RngState(AppConfig.SEED)
    spread = pool.spread if spread is None else spread
    n_cells = grid[0] * grid[1]
    if n_cells < len(scene.concept_ids):
        raise ValueError(f"grid {grid} has fewer cells than the {len(scene.concept_ids)} concepts of the scene")
    cells = rng.permutation(n_cells)[: len(scene.concept_ids)]
    owner = np.full(n_cells, -1)
    owner[cells] = scene.concept_ids

    labels = np.repeat(np.where(owner >= 0, owner + 1, BACKGROUND_LABEL), patches_per_cell)
    centers = np.where((labels > 0)[:, None], pool.concepts[np.maximum(labels - 1, 0)], pool.background[None, :])
    scale = np.where(labels > 0, spread, noise)[:, None]
    F, _ = normalize_rows(centers + scale * rng.normal(size=centers.shape))
    return PatchFeatures(F=F, patch_labels=labels)


def concept_pairs(concept_ids, arity: int = 2) -> list[tuple[int, ...]]:
    return list(itertools.combinations(sorted(int(c) for c in concept_ids), arity))
