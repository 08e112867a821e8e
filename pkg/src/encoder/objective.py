"""Episode objective and its analytic gradients.

The total loss of one episode is

    (1 − w)·CE_hol + w·CE_ct + R(y̌)

where CE_hol uses τ·cos(e_q, P_c) logits, CE_ct uses τ·s_Ch logits on
centered top-κ slots and R is the configured decorrelation regularizer over
every raw slot projection of the episode. The backward pass is written out
by hand and checked against central differences in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.bench.episode_batch import EpisodeBatch
from src.config.config import AppConfig
from src.core.errors import EmptyAfterCentering
from src.encoder.losses import DecorrelationConfig, cross_entropy, decorrelation_terms
from src.encoder.model import EncodedBatch, EncoderParams, encode_images, prototype_matrix
from src.matching.couplings import MatcherConfig
from src.matching.matchers import center_rows, chamfer_terms, select_topk


@dataclass(frozen=True)
class ObjectiveConfig:
    decorrelation: DecorrelationConfig = field(default_factory=DecorrelationConfig)
    ct_weight: float = AppConfig.CT_WEIGHT
    kappa: int = AppConfig.TOP_KAPPA
    stop_prototype_gradient: bool = AppConfig.PROTOTYPE_STOP_GRADIENT

    def __post_init__(self):
        if not 0.0 <= self.ct_weight <= 1.0:
            raise ValueError(f"ct_weight must lie in [0, 1], got {self.ct_weight}")
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    decorrelation: float
    ct: float | None
    total: float

    def as_dict(self) -> dict:
        return {"ce": self.ce, "decorrelation": self.decorrelation,
                "ct": np.nan if self.ct is None else self.ct, "total": self.total}


@dataclass(frozen=True)
class EncoderGradients:
    W1: np.ndarray
    v: np.ndarray
    W2: np.ndarray
    log_tau: float

    def to_vector(self) -> np.ndarray:
        """Same ordering as :meth:`EncoderParams.to_vector`."""
        return np.concatenate([self.W1.ravel(), self.v.ravel(), self.W2.ravel(), [self.log_tau]])


@dataclass
class _Upstream:
    """Loss gradients accumulated on the encoder outputs."""
    e: np.ndarray
    z: np.ndarray
    y_raw: np.ndarray
    log_tau: float = 0.0


def _class_targets(episode: EpisodeBatch) -> tuple[np.ndarray, np.ndarray]:
    classes = episode.classes
    return classes, np.searchsorted(classes, episode.query_labels)


def _holistic_term(episode, encoded, tau, weight, config, upstream, with_grad) -> float:
    n_support = episode.support_phi.shape[0]
    classes, targets = _class_targets(episode)
    e_support, e_query = encoded.e[:n_support], encoded.e[n_support:]
    P, mean_norms, counts = prototype_matrix(e_support, episode.support_labels, classes)
    cosines = e_query @ P.T
    loss, _, d_logits = cross_entropy(tau * cosines, targets)
    if not with_grad or weight == 0.0:
        return loss

    d_logits = weight * d_logits
    upstream.log_tau += tau * float(np.sum(d_logits * cosines))
    upstream.e[n_support:] += tau * d_logits @ P
    if not config.stop_prototype_gradient:
        dP = tau * d_logits.T @ e_query
        d_mean = (dP - P * np.sum(P * dP, axis=1, keepdims=True)) / mean_norms[:, None]
        owner = np.searchsorted(classes, episode.support_labels)
        upstream.e[:n_support] += d_mean[owner] / counts[owner, None]
    return loss


def _selected_rows(encoded: EncodedBatch, keep: np.ndarray, kappa: int) -> list[np.ndarray]:
    rows = []
    for b in range(encoded.omega.shape[0]):
        chosen = [k for k in select_topk(encoded.omega[b], kappa) if keep[b, k]]
        if not chosen:
            raise EmptyAfterCentering(f"image {b}: all top-{kappa} slots vanished after centering")
        rows.append(np.array(chosen, dtype=np.int64))
    return rows


def _chamfer_term(episode, encoded, tau, weight, kappa, upstream, with_grad) -> float:
    n_support = episode.support_phi.shape[0]
    classes, targets = _class_targets(episode)
    z_hat, centered_norms, keep = center_rows(encoded.z)
    rows = _selected_rows(encoded, keep, kappa)

    pools = []
    for c in classes:
        members = np.flatnonzero(episode.support_labels == c)
        images = np.concatenate([np.full(rows[b].size, b) for b in members])
        slots = np.concatenate([rows[b] for b in members])
        pools.append((images, slots))

    n_query = episode.query_phi.shape[0]
    scores = np.zeros((n_query, classes.size))
    matches = {}
    for q in range(n_query):
        qb = n_support + q
        A = z_hat[qb, rows[qb]]
        for j, (images, slots) in enumerate(pools):
            forward, backward, f_idx, b_idx = chamfer_terms(A, z_hat[images, slots])
            scores[q, j] = forward + backward
            matches[q, j] = (f_idx, b_idx)

    loss, _, d_logits = cross_entropy(tau * scores, targets)
    if not with_grad or weight == 0.0:
        return loss

    d_scores = weight * tau * d_logits
    upstream.log_tau += weight * tau * float(np.sum(d_logits * scores))
    d_z_hat = np.zeros_like(z_hat)
    for (q, j), (f_idx, b_idx) in matches.items():
        qb = n_support + q
        q_slots = rows[qb]
        images, slots = pools[j]
        A = z_hat[qb, q_slots]
        B = z_hat[images, slots]
        g_forward = d_scores[q, j] / q_slots.size
        g_backward = d_scores[q, j] / slots.size
        np.add.at(d_z_hat, (qb, q_slots), g_forward * B[f_idx])
        np.add.at(d_z_hat, (images[f_idx], slots[f_idx]), g_forward * A)
        np.add.at(d_z_hat, (images, slots), g_backward * A[b_idx])
        np.add.at(d_z_hat, (qb, q_slots[b_idx]), g_backward * B)

    # through the renormalization of the centered rows, then the centering
    radial = np.sum(z_hat * d_z_hat, axis=2, keepdims=True)
    safe_norms = np.where(keep, centered_norms, 1.0)[..., None]
    d_centered = np.where(keep[..., None], (d_z_hat - z_hat * radial) / safe_norms, 0.0)
    upstream.z += d_centered - d_centered.mean(axis=1, keepdims=True)
    return loss


def _backward(params: EncoderParams, encoded: EncodedBatch, upstream: _Upstream) -> EncoderGradients:
    e = encoded.e
    d_u = (upstream.e - e * np.sum(e * upstream.e, axis=1, keepdims=True)) / encoded.u_norm[:, None]
    d_y = upstream.y_raw + encoded.omega[..., None] * d_u[:, None, :]
    d_omega = np.einsum("bkd,bd->bk", encoded.y_raw, d_u)

    z = encoded.z
    d_y += (upstream.z - z * np.sum(z * upstream.z, axis=2, keepdims=True)) / encoded.y_norm[..., None]

    omega = encoded.omega
    d_logit = omega * (d_omega - np.sum(omega * d_omega, axis=1, keepdims=True))
    d_v = np.einsum("bk,bkh->h", d_logit, encoded.hidden)
    d_pre = d_logit[..., None] * params.router.v[None, None, :] * (encoded.pre > 0)
    d_W1 = np.einsum("bkh,bkd->hd", d_pre, encoded.phi)
    d_W2 = np.einsum("bkd,bke->de", d_y, encoded.phi)
    return EncoderGradients(W1=d_W1, v=d_v, W2=d_W2, log_tau=upstream.log_tau)


def evaluate_objective(params: EncoderParams, episode: EpisodeBatch, config: ObjectiveConfig | None = None,
                       with_grad: bool = True) -> tuple[LossBreakdown, EncoderGradients | None]:
    """Forward pass of the episode loss and, optionally, its gradients.

    Returns:
        tuple[LossBreakdown, EncoderGradients | None]: Loss terms and the
            gradients of ``total`` (None when ``with_grad`` is False).
    """
    config = config or ObjectiveConfig()
    encoded = encode_images(params, episode.all_phi())
    tau = params.head.tau
    weight = config.ct_weight
    upstream = _Upstream(e=np.zeros_like(encoded.e), z=np.zeros_like(encoded.z),
                         y_raw=np.zeros_like(encoded.y_raw))

    ce = _holistic_term(episode, encoded, tau, 1.0 - weight, config, upstream, with_grad)
    ct = None
    if weight > 0.0:
        ct = _chamfer_term(episode, encoded, tau, weight, config.kappa, upstream, with_grad)

    B, K, D = encoded.y_raw.shape
    decorrelation, d_flat = decorrelation_terms(config.decorrelation, encoded.y_raw.reshape(B * K, D), with_grad)
    total = (1.0 - weight) * ce + (weight * ct if ct is not None else 0.0) + decorrelation
    breakdown = LossBreakdown(ce=ce, decorrelation=decorrelation, ct=ct, total=total)
    if not with_grad:
        return breakdown, None
    upstream.y_raw += d_flat.reshape(B, K, D)
    return breakdown, _backward(params, encoded, upstream)


def total_loss(params: EncoderParams, episode: EpisodeBatch, config: ObjectiveConfig | None = None) -> float:
    breakdown, _ = evaluate_objective(params, episode, config, with_grad=False)
    return breakdown.total


def encoder_gradients(params: EncoderParams, episode: EpisodeBatch,
                      config: ObjectiveConfig | None = None) -> EncoderGradients:
    """Analytic gradients of the total episode loss for W1, v, W2 and log τ."""
    _, grads = evaluate_objective(params, episode, config, with_grad=True)
    return grads


def ct_loss(episode: EpisodeBatch, params: EncoderParams, matcher_config: MatcherConfig | None = None) -> float:
    """Cross-entropy of τ·s_Ch logits alone, with κ from ``matcher_config``."""
    kappa = (matcher_config or MatcherConfig()).kappa
    config = ObjectiveConfig(decorrelation=DecorrelationConfig(kind="none", lambda_d=0.0),
                             ct_weight=1.0, kappa=kappa)
    breakdown, _ = evaluate_objective(params, episode, config, with_grad=False)
    return breakdown.ct
