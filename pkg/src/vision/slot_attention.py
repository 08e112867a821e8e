"""Frozen slot attention forward pass and the attention-weighted aggregate readout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.config.config import AppConfig
from src.core.errors import ShapeError
from src.numerics.tensor_core import RngState, as_matrix, normalize_rows, softmax_columns

BACKGROUND_LABEL = 0


@dataclass(frozen=True)
class PatchFeatures:
    """N×D patch tokens of one image plus optional per-patch category ids.

    Category 0 is background; object categories are positive integers.
    """
    F: np.ndarray
    patch_labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "F", as_matrix(self.F, "patch features"))
        if self.patch_labels is not None:
            labels = np.asarray(self.patch_labels, dtype=np.int64)
            if labels.shape != (self.F.shape[0],):
                raise ShapeError(f"patch_labels must have shape ({self.F.shape[0]},), got {labels.shape}")
            object.__setattr__(self, "patch_labels", labels)

    @property
    def num_patches(self) -> int:
        return self.F.shape[0]

    @property
    def dim(self) -> int:
        return self.F.shape[1]


@dataclass(frozen=True)
class GRUParams:
    """Standard gated recurrent cell over D-dim states (input and hidden both D)."""
    W_ir: np.ndarray
    W_iz: np.ndarray
    W_in: np.ndarray
    W_hr: np.ndarray
    W_hz: np.ndarray
    W_hn: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_in: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hn: np.ndarray


@dataclass(frozen=True)
class SlotAttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    gru: GRUParams
    prior_mean: np.ndarray
    prior_log_std: np.ndarray
    iterations: int = AppConfig.SLOT_ITERATIONS

    def __post_init__(self):
        D = self.prior_mean.shape[0]
        for name in ("W_q", "W_k", "W_v"):
            if getattr(self, name).shape != (D, D):
                raise ShapeError(f"{name} must be {D}x{D}, got {getattr(self, name).shape}")
        if self.iterations < 1:
            raise ValueError(f"slot attention needs at least one iteration, got {self.iterations}")

    @property
    def dim(self) -> int:
        return self.prior_mean.shape[0]

    def fingerprint(self) -> bytes:
        """Raw bytes of every parameter, used to prove the frozen contract."""
        arrays = [self.W_q, self.W_k, self.W_v, self.prior_mean, self.prior_log_std]
        arrays += [getattr(self.gru, f) for f in GRUParams.__dataclass_fields__]
        return b"".join(np.ascontiguousarray(a, dtype=np.float64).tobytes() for a in arrays)


@dataclass(frozen=True)
class SlotState:
    slots: np.ndarray   # K×D GRU hidden states
    attn: np.ndarray    # K×N, columns sum to one


@dataclass(frozen=True)
class SlotAggregates:
    phi: np.ndarray                          # K×D, unit rows
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(self.phi.shape[0], dtype=bool))


def oracle_params(D: int, sharpness: float = AppConfig.ORACLE_SHARPNESS,
                  iterations: int = AppConfig.SLOT_ITERATIONS) -> SlotAttentionParams:
    """Hand-built parameters under which slots latch onto patch clusters.

    Query/key maps are scaled identities so the attention logit is
    ``sharpness · ⟨s_k, F_n⟩``; the GRU keeps its update gate closed
    (output = tanh(update input)), turning each iteration into a soft
    k-means step on the patch directions.
    """
    scale = np.sqrt(sharpness * np.sqrt(D))
    zeros, eye = np.zeros((D, D)), np.eye(D)
    gru = GRUParams(
        W_ir=zeros, W_iz=zeros, W_in=eye, W_hr=zeros, W_hz=zeros, W_hn=zeros,
        b_ir=np.zeros(D), b_iz=np.full(D, -30.0), b_in=np.zeros(D),
        b_hr=np.zeros(D), b_hz=np.zeros(D), b_hn=np.zeros(D),
    )
    return SlotAttentionParams(
        W_q=scale * eye, W_k=scale * eye, W_v=eye.copy(), gru=gru,
        prior_mean=np.zeros(D), prior_log_std=np.zeros(D), iterations=iterations,
    )


def random_params(D: int, rng: RngState, iterations: int = AppConfig.SLOT_ITERATIONS) -> SlotAttentionParams:
    """Seeded random parameters with 1/sqrt(D) scaled Gaussian weights."""
    scale = 1.0 / np.sqrt(D)

    def mat():
        return rng.normal(size=(D, D), scale=scale)

    def vec():
        return rng.normal(size=D, scale=scale)

    gru = GRUParams(W_ir=mat(), W_iz=mat(), W_in=mat(), W_hr=mat(), W_hz=mat(), W_hn=mat(),
                    b_ir=vec(), b_iz=vec(), b_in=vec(), b_hr=vec(), b_hz=vec(), b_hn=vec())
    return SlotAttentionParams(W_q=mat(), W_k=mat(), W_v=mat(), gru=gru,
                               prior_mean=rng.normal(size=D, scale=scale),
                               prior_log_std=np.full(D, np.log(scale)), iterations=iterations)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(gru: GRUParams, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU step on row-stacked inputs ``x`` and hidden states ``h`` (K×D)."""
    r = _sigmoid(x @ gru.W_ir.T + gru.b_ir + h @ gru.W_hr.T + gru.b_hr)
    z = _sigmoid(x @ gru.W_iz.T + gru.b_iz + h @ gru.W_hz.T + gru.b_hz)
    n = np.tanh(x @ gru.W_in.T + gru.b_in + r * (h @ gru.W_hn.T + gru.b_hn))
    return (1.0 - z) * n + z * h


def init_slots(params: SlotAttentionParams, K: int, rng: RngState) -> np.ndarray:
    """Draws K slots from the Gaussian prior ``mean + exp(log_std) ⊙ noise``."""
    if K < 1:
        raise ValueError(f"need at least one slot, got K={K}")
    noise = rng.normal(size=(K, params.dim))
    return params.prior_mean[None, :] + np.exp(params.prior_log_std)[None, :] * noise


def attention_iteration(params: SlotAttentionParams, slots: np.ndarray, features: PatchFeatures) -> SlotState:
    """One competitive attention round followed by the GRU update.

    Attention is a softmax over slots of ``⟨W_q s_k, W_k F_n⟩ / √D``. Each
    slot's weights are then renormalized over patches to form its update
    input; a slot whose total mass is below the floor receives a zero input.
    """
    F = features.F
    if slots.shape[1] != F.shape[1] or F.shape[1] != params.dim:
        raise ShapeError(f"slot dim {slots.shape[1]} / feature dim {F.shape[1]} / params dim {params.dim} disagree")
    queries = slots @ params.W_q.T
    keys = F @ params.W_k.T
    attn = softmax_columns(queries @ keys.T / np.sqrt(params.dim))

    mass = attn.sum(axis=1, keepdims=True)
    alive = mass > AppConfig.ATTENTION_MASS_FLOOR
    renormalized = np.where(alive, attn / np.where(alive, mass, 1.0), 0.0)
    updates = renormalized @ (F @ params.W_v.T)
    return SlotState(slots=gru_cell(params.gru, updates, slots), attn=attn)


def run_slot_attention(params: SlotAttentionParams, features: PatchFeatures, K: int, rng: RngState,
                       initial_slots: np.ndarray | None = None) -> SlotState:
    """Runs ``params.iterations`` attention rounds from prior-sampled slots.

    Args:
        initial_slots (np.ndarray | None): Overrides the prior draw; used by
            the equivariance checks.
    """
    slots = init_slots(params, K, rng) if initial_slots is None else np.asarray(initial_slots, dtype=np.float64)
    state = None
    for _ in range(params.iterations):
        state = attention_iteration(params, slots, features)
        slots = state.slots
    return state


def aggregate_slots(attn: np.ndarray, features: PatchFeatures) -> SlotAggregates:
    """φ̃_k = L2-norm(Σ_n α_kn F_n); rows whose weighted sum vanishes are flagged."""
    attn = as_matrix(attn, "attn")
    if attn.shape[1] != features.num_patches:
        raise ShapeError(f"attention covers {attn.shape[1]} patches, features have {features.num_patches}")
    phi, degenerate = normalize_rows(attn @ features.F)
    return SlotAggregates(phi=phi, degenerate=degenerate)
