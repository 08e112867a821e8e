"""Phase-I trainables: the MLP router, the shared projection head and prototypes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.config.config import AppConfig
from src.core.errors import DegenerateVector, ShapeError
from src.numerics.tensor_core import RngState, l2_normalize, normalize_rows, softmax
from src.vision.slot_attention import SlotAggregates


@dataclass(frozen=True)
class RouterParams:
    W1: np.ndarray  # h×D
    v: np.ndarray   # h

    def __post_init__(self):
        if self.W1.ndim != 2 or self.W1.shape[0] < 1:
            raise ShapeError(f"router W1 must be h×D with h >= 1, got {self.W1.shape}")
        if self.v.shape != (self.W1.shape[0],):
            raise ShapeError(f"router v must have shape ({self.W1.shape[0]},), got {self.v.shape}")

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]


@dataclass(frozen=True)
class ProjectionHead:
    W2: np.ndarray   # D×D
    log_tau: float

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))


@dataclass(frozen=True)
class EncoderParams:
    router: RouterParams
    head: ProjectionHead

    @property
    def dim(self) -> int:
        return self.head.W2.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.router.hidden_dim

    @classmethod
    def identity(cls, D: int, h: int, rng: RngState,
                 tau: float = AppConfig.INITIAL_TEMPERATURE,
                 router_scale: float = AppConfig.ROUTER_INIT_SCALE) -> "EncoderParams":
        """Identity projection head, small Gaussian router, τ = ``tau``."""
        W1 = rng.normal(size=(h, D), scale=router_scale)
        v = rng.normal(size=h, scale=router_scale)
        return cls(RouterParams(W1, v), ProjectionHead(np.eye(D), float(np.log(tau))))

    def to_vector(self) -> np.ndarray:
        """Flat view ordered W1, v, W2, log_tau (the on-disk order)."""
        return np.concatenate([self.router.W1.ravel(), self.router.v.ravel(),
                               self.head.W2.ravel(), [self.head.log_tau]])

    @classmethod
    def from_vector(cls, vector: np.ndarray, D: int, h: int) -> "EncoderParams":
        vector = np.asarray(vector, dtype=np.float64)
        expected = h * D + h + D * D + 1
        if vector.size != expected:
            raise ShapeError(f"parameter vector has {vector.size} entries, expected {expected}")
        W1 = vector[: h * D].reshape(h, D)
        v = vector[h * D: h * D + h]
        W2 = vector[h * D + h: h * D + h + D * D].reshape(D, D)
        return cls(RouterParams(W1.copy(), v.copy()), ProjectionHead(W2.copy(), float(vector[-1])))

    def with_head(self, W2: np.ndarray) -> "EncoderParams":
        return EncoderParams(self.router, ProjectionHead(np.asarray(W2, dtype=np.float64), self.head.log_tau))


@dataclass(frozen=True)
class SlotEmbeddings:
    y_raw: np.ndarray  # K×D, W2 φ̃_k
    z: np.ndarray      # K×D, unit rows


@dataclass(frozen=True)
class HolisticEmbedding:
    u: np.ndarray
    e: np.ndarray


@dataclass(frozen=True)
class Prototype:
    class_id: int
    P: np.ndarray


def _phi_array(phi) -> np.ndarray:
    return phi.phi if isinstance(phi, SlotAggregates) else np.asarray(phi, dtype=np.float64)


def route(router: RouterParams, phi) -> np.ndarray:
    """Simplex importance weights ω_k ∝ exp(vᵀ ReLU(W1 φ̃_k))."""
    phi = _phi_array(phi)
    return softmax(np.maximum(phi @ router.W1.T, 0.0) @ router.v)


def project_slots(head: ProjectionHead, phi) -> SlotEmbeddings:
    """Per-slot projections y̌_k = W2 φ̃_k and their unit-norm versions z_k.

    Raises:
        DegenerateVector: If W2 annihilates a slot; ``index`` names the slot.
    """
    phi = _phi_array(phi)
    y_raw = phi @ head.W2.T
    z, degenerate = normalize_rows(y_raw)
    if np.any(degenerate):
        index = int(np.flatnonzero(degenerate)[0])
        raise DegenerateVector(f"projection of slot {index} vanished", index=index)
    return SlotEmbeddings(y_raw=y_raw, z=z)


def holistic_embed(head: ProjectionHead, omega: np.ndarray, phi) -> HolisticEmbedding:
    """e = L2-norm(W2 Σ_k ω_k φ̃_k)."""
    phi = _phi_array(phi)
    u = head.W2 @ (np.asarray(omega, dtype=np.float64) @ phi)
    return HolisticEmbedding(u=u, e=l2_normalize(u))


def compute_prototypes(embeddings: list[tuple[np.ndarray, int]]) -> list[Prototype]:
    """P_c = L2-norm(mean of class-c holistic embeddings), ordered by class id.

    Raises:
        ValueError: On an empty embedding list.
        DegenerateVector: If a class mean vanishes (e.g. antipodal supports).
    """
    if not embeddings:
        raise ValueError("compute_prototypes needs at least one embedding")
    by_class: dict[int, list[np.ndarray]] = {}
    for e, class_id in embeddings:
        by_class.setdefault(int(class_id), []).append(np.asarray(e, dtype=np.float64))
    prototypes = []
    for class_id in sorted(by_class):
        members = by_class[class_id]
        try:
            P = l2_normalize(np.mean(members, axis=0))
        except DegenerateVector as exc:
            raise DegenerateVector(f"prototype of class {class_id} is degenerate: {exc}", index=class_id) from exc
        prototypes.append(Prototype(class_id=class_id, P=P))
    return prototypes


@dataclass(frozen=True)
class EncodedBatch:
    """Every intermediate of the batched forward pass over (B, K, D) aggregates."""
    phi: np.ndarray
    pre: np.ndarray      # (B, K, h) router pre-activations
    hidden: np.ndarray   # (B, K, h) ReLU outputs
    omega: np.ndarray    # (B, K)
    y_raw: np.ndarray    # (B, K, D)
    y_norm: np.ndarray   # (B, K)
    z: np.ndarray        # (B, K, D)
    u: np.ndarray        # (B, D)
    u_norm: np.ndarray   # (B,)
    e: np.ndarray        # (B, D)


def encode_images(params: EncoderParams, phi: np.ndarray) -> EncodedBatch:
    """Batched router + projection forward pass.

    Raises:
        DegenerateVector: If any slot projection or holistic aggregate vanishes.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 3 or phi.shape[2] != params.dim:
        raise ShapeError(f"expected (B, K, {params.dim}) aggregates, got {phi.shape}")
    pre = phi @ params.router.W1.T
    hidden = np.maximum(pre, 0.0)
    omega = softmax(hidden @ params.router.v, axis=1)
    y_raw = phi @ params.head.W2.T
    y_norm = np.linalg.norm(y_raw, axis=2)
    if np.any(y_norm <= AppConfig.NORMALIZE_EPS):
        image, slot = np.argwhere(y_norm <= AppConfig.NORMALIZE_EPS)[0]
        raise DegenerateVector(f"projection of slot {slot} in image {image} vanished", index=int(slot))
    z = y_raw / y_norm[..., None]
    u = np.einsum("bk,bkd->bd", omega, y_raw)
    u_norm = np.linalg.norm(u, axis=1)
    if np.any(u_norm <= AppConfig.NORMALIZE_EPS):
        image = int(np.flatnonzero(u_norm <= AppConfig.NORMALIZE_EPS)[0])
        raise DegenerateVector(f"holistic aggregate of image {image} vanished", index=image)
    e = u / u_norm[:, None]
    return EncodedBatch(phi=phi, pre=pre, hidden=hidden, omega=omega, y_raw=y_raw, y_norm=y_norm,
                        z=z, u=u, u_norm=u_norm, e=e)


def prototype_matrix(e_support: np.ndarray, support_labels: np.ndarray,
                     classes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked prototypes for ``classes`` with the unnormalized means and sizes.

    Returns:
        tuple: (P (C, D), mean norms (C,), members per class (C,)).
    """
    means = np.stack([e_support[support_labels == c].mean(axis=0) for c in classes])
    counts = np.array([np.sum(support_labels == c) for c in classes], dtype=np.float64)
    norms = np.linalg.norm(means, axis=1)
    if np.any(norms <= AppConfig.NORMALIZE_EPS):
        class_id = int(classes[np.flatnonzero(norms <= AppConfig.NORMALIZE_EPS)[0]])
        raise DegenerateVector(f"prototype of class {class_id} is degenerate", index=class_id)
    return means / norms[:, None], norms, counts
