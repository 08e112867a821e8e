"""Frozen scene renderer and episodic sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.bench.concepts import ConceptPool, render_scene
from src.bench.episode_batch import EpisodeBatch
from src.bench.splits import SplitPart, SplitSpec
from src.config.config import AppConfig
from src.numerics.tensor_core import RngState, l2_normalize
from src.vision.slot_attention import SlotAttentionParams, aggregate_slots, run_slot_attention

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderedImage:
    phi: np.ndarray           # K×D slot aggregates
    attn: np.ndarray          # K×N attention of the final iteration
    patch_labels: np.ndarray  # N category ids


class SceneRenderer:
    """Concept pool plus frozen slot attention: scene class in, slot aggregates out.

    Nothing in this class is ever updated; ``fingerprint`` lets callers prove it.
    """
    def __init__(self, pool: ConceptPool, slot_params: SlotAttentionParams,
                 num_slots: int = AppConfig.NUM_SLOTS, grid: tuple[int, int] = AppConfig.GRID_SHAPE,
                 patches_per_cell: int = AppConfig.PATCHES_PER_CELL, noise: float = AppConfig.PATCH_NOISE):
        if slot_params.dim != pool.dim:
            raise ValueError(f"slot attention dim {slot_params.dim} does not match pool dim {pool.dim}")
        self.pool = pool
        self.slot_params = slot_params
        self.num_slots = num_slots
        self.grid = tuple(grid)
        self.patches_per_cell = patches_per_cell
        self.noise = noise

    def fingerprint(self) -> bytes:
        return self.pool.fingerprint() + self.slot_params.fingerprint()

    def render(self, split: SplitSpec, class_id: int, rng: RngState, part: SplitPart | None = None) -> RenderedImage:
        part = part or SplitPart("default", ())
        features = render_scene(
            self.pool, split.classes[class_id], grid=part.grid or self.grid,
            patches_per_cell=self.patches_per_cell, noise=self.noise * part.noise_scale,
            rng=rng.spawn("scene"), spread=self.pool.spread * part.spread_scale,
        )
        state = run_slot_attention(self.slot_params, features, self.num_slots, rng.spawn("slots"))
        aggregates = aggregate_slots(state.attn, features)
        phi = aggregates.phi
        if np.any(aggregates.degenerate):
            # a cancelled weighted sum carries no direction; use the image mean instead
            logger.debug("class %d: %d degenerate slot aggregates replaced", class_id, int(aggregates.degenerate.sum()))
            phi = phi.copy()
            phi[aggregates.degenerate] = l2_normalize(features.F.mean(axis=0))
        return RenderedImage(phi=phi, attn=state.attn, patch_labels=features.patch_labels)


def sample_episode(split: SplitSpec, part: SplitPart, way: int, shot: int, queries: int,
                   renderer: SceneRenderer, rng: RngState, keep_attention: bool = False) -> EpisodeBatch:
    """Draws ``way`` distinct classes of ``part`` and renders fresh supports and queries.

    Image streams are children of ``rng``, so every episode needs its own stream.

    Raises:
        ValueError: If the part has fewer than ``way`` classes.
    """
    if way < 1 or shot < 1 or queries < 1:
        raise ValueError(f"way, shot and queries must be positive, got {way}/{shot}/{queries}")
    if len(part.class_ids) < way:
        raise ValueError(f"split part '{part.name}' has {len(part.class_ids)} classes, cannot sample {way}-way")
    chosen = sorted(int(c) for c in rng.choice(np.array(part.class_ids), size=way, replace=False))

    support, support_labels, query, query_labels = [], [], [], []
    for class_id in chosen:
        for i in range(shot + queries):
            image = renderer.render(split, class_id, rng.spawn("image", class_id, i), part)
            if i < shot:
                support.append(image)
                support_labels.append(class_id)
            else:
                query.append(image)
                query_labels.append(class_id)
    return EpisodeBatch(
        support_phi=np.stack([img.phi for img in support]),
        support_labels=np.array(support_labels),
        query_phi=np.stack([img.phi for img in query]),
        query_labels=np.array(query_labels),
        way=way, shot=shot, queries_per_class=queries,
        support_attn=[img.attn for img in support] if keep_attention else None,
        support_patch_labels=[img.patch_labels for img in support] if keep_attention else None,
    )
