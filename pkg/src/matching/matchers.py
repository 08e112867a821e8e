"""Part-level scoring on centered slot projections.

Slots are centered per image before matching so that directions shared by
every slot of an image (background, illumination) do not inflate the
Chamfer similarity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.config.config import AppConfig
from src.core.errors import EmptyAfterCentering, ShapeError
from src.matching.couplings import MatcherConfig, assignment_score, cost_matrix, make_coupling


@dataclass(frozen=True)
class CenteredSlots:
    """Unit-norm centered slot rows ẑ with the slot id each row came from."""
    z_hat: np.ndarray
    source_slot_ids: list[int]
    dropped_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.z_hat.shape[0] != len(self.source_slot_ids):
            raise ShapeError(f"{self.z_hat.shape[0]} rows but {len(self.source_slot_ids)} source ids")

    def __len__(self) -> int:
        return len(self.source_slot_ids)

    def restrict(self, slot_ids) -> "CenteredSlots":
        """Surviving rows whose source id is in ``slot_ids``, in the order given."""
        position = {slot: row for row, slot in enumerate(self.source_slot_ids)}
        keep = [int(s) for s in slot_ids if int(s) in position]
        rows = [position[s] for s in keep]
        return CenteredSlots(z_hat=self.z_hat[rows], source_slot_ids=keep,
                             dropped_ids=[int(s) for s in slot_ids if int(s) not in position])

    @staticmethod
    def union(pools: list["CenteredSlots"]) -> "CenteredSlots":
        """Stacks several slot sets into one pool; source ids become (set, slot) positions."""
        if not pools:
            raise ValueError("cannot build a pool from zero slot sets")
        z_hat = np.concatenate([p.z_hat for p in pools], axis=0)
        ids = list(range(z_hat.shape[0]))
        return CenteredSlots(z_hat=z_hat, source_slot_ids=ids)


def center_rows(z: np.ndarray, eps: float = AppConfig.NORMALIZE_EPS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized centering over the slot axis of a (..., K, D) stack.

    Returns:
        tuple: (unit centered rows with zeros where dropped, centered norms,
            survivor mask).
    """
    centered = z - z.mean(axis=-2, keepdims=True)
    norms = np.linalg.norm(centered, axis=-1)
    keep = norms > eps
    z_hat = np.where(keep[..., None], centered / np.where(keep, norms, 1.0)[..., None], 0.0)
    return z_hat, norms, keep


def center_slots(z: np.ndarray) -> CenteredSlots:
    """ẑ_k = L2-norm(z_k − mean_j z_j); rows equal to the mean are dropped.

    Raises:
        ValueError: With fewer than two slots.
        EmptyAfterCentering: If every row coincides with the mean.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"centering needs a K×D matrix with K >= 2, got shape {z.shape}")
    z_hat, _, keep = center_rows(z)
    if not np.any(keep):
        raise EmptyAfterCentering("all slot rows coincide with their mean")
    ids = np.flatnonzero(keep)
    return CenteredSlots(z_hat=z_hat[ids], source_slot_ids=ids.tolist(),
                         dropped_ids=np.flatnonzero(~keep).tolist())


def select_topk(omega: np.ndarray, kappa: int) -> list[int]:
    """Indices of the κ largest weights, descending, ties to the lower index.

    κ larger than K keeps every slot.
    """
    omega = np.asarray(omega, dtype=np.float64)
    order = np.argsort(-omega, kind="stable")
    return order[: min(int(kappa), omega.shape[0])].tolist()


def chamfer_terms(A: np.ndarray, B: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Forward and backward Chamfer terms of two unit-row sets.

    Returns:
        tuple: (forward, backward, best B row for each A row, best A row for
            each B row).
    """
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptyAfterCentering("Chamfer matching needs two non-empty slot sets")
    S = cost_matrix(A, B)
    forward_idx = np.argmax(S, axis=1)
    backward_idx = np.argmax(S, axis=0)
    forward = float(S[np.arange(S.shape[0]), forward_idx].mean())
    backward = float(S[backward_idx, np.arange(S.shape[1])].mean())
    return forward, backward, forward_idx, backward_idx


def _rows(slots) -> np.ndarray:
    return slots.z_hat if isinstance(slots, CenteredSlots) else np.asarray(slots, dtype=np.float64)


def chamfer_score(query_slots, support_pool) -> float:
    """Bidirectional hard Chamfer similarity, in [-2, 2]."""
    forward, backward, _, _ = chamfer_terms(_rows(query_slots), _rows(support_pool))
    return forward + backward


def bidirectional_assignment_score(config: MatcherConfig, query_slots, support_pool) -> float:
    """Forward plus backward assignment score of the configured coupling.

    For ``hard_chamfer`` this equals :func:`chamfer_score`.
    """
    A, B = _rows(query_slots), _rows(support_pool)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptyAfterCentering("assignment matching needs two non-empty slot sets")
    S = cost_matrix(A, B)
    forward = assignment_score(make_coupling(config, S), S)
    backward = assignment_score(make_coupling(config, S.T), S.T)
    return forward + backward


def blend_score(s_hol, s_ch, gamma: float, tau: float):
    """γ·s_hol + (1 − γ)·τ·s_ch; works on scalars and arrays alike."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma * s_hol + (1.0 - gamma) * tau * s_ch
