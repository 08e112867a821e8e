"""Slot purity: fraction of slots whose dominant category holds a strict majority."""
from __future__ import annotations

import numpy as np

from src.core.errors import ShapeError
from src.vision.slot_attention import BACKGROUND_LABEL


def dominant_categories(attn: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot dominant category and the share of mass it captures.

    Background (category 0) competes like any other category. Ties go to the
    lower category id.

    Returns:
        tuple[np.ndarray, np.ndarray]: (category id per slot, dominant mass
            divided by the slot's total mass).
    """
    attn = np.asarray(attn, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if attn.shape[1] != labels.shape[0]:
        raise ShapeError(f"attention has {attn.shape[1]} patches, labels have {labels.shape[0]}")
    categories = np.unique(labels)  # ascending, so argmax ties resolve to the lower id
    per_category = np.stack([attn[:, labels == c].sum(axis=1) for c in categories], axis=1)
    winner = np.argmax(per_category, axis=1)
    totals = attn.sum(axis=1)
    dominant_mass = per_category[np.arange(attn.shape[0]), winner]
    share = np.divide(dominant_mass, totals, out=np.zeros_like(totals), where=totals > 0)
    return categories[winner], share


def slot_purity(attn_batch: list[np.ndarray], labels_batch: list[np.ndarray]) -> float:
    """Mean over images of the per-image fraction of strict-majority slots.

    Raises:
        ValueError: On an empty batch, mismatched lengths, or an image without
            any non-background patch.
    """
    if not attn_batch:
        raise ValueError("slot_purity needs at least one image")
    if len(attn_batch) != len(labels_batch):
        raise ValueError(f"{len(attn_batch)} attention maps but {len(labels_batch)} label vectors")
    per_image = []
    for index, (attn, labels) in enumerate(zip(attn_batch, labels_batch)):
        if not np.any(np.asarray(labels) != BACKGROUND_LABEL):
            raise ValueError(f"image {index} has no non-background category")
        _, share = dominant_categories(attn, labels)
        per_image.append(float(np.mean(share > 0.5)))
    return float(np.mean(per_image))
