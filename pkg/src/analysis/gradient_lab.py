"""Per-slot gradient fields of the holistic and part-level scores.

Fields are K×D matrices whose row k is the gradient of a score with respect
to one slot variable: either the raw projection y̌_k ("raw") or the unit
embedding z_k ("unit", Riemannian gradient on the sphere). The analytic
forms are checked against central differences in the tests and by the
``gradlab`` command.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.bench.episode_batch import EpisodeBatch
from src.config.config import AppConfig
from src.core.errors import ShapeError
from src.encoder.model import EncoderParams, encode_images, prototype_matrix
from src.matching.couplings import (MatcherConfig, assignment_score, cost_matrix, hard_coupling,
                                    make_coupling, sinkhorn)
from src.matching.matchers import center_rows, chamfer_terms, select_topk
from src.numerics.tensor_core import RngState, finite_diff_gradient, l2_normalize, normalize_rows

logger = logging.getLogger(__name__)

REFERENCES = ("raw", "unit")


@dataclass(frozen=True)
class GradientField:
    per_slot: np.ndarray
    reference: str

    def __post_init__(self):
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}, got '{self.reference}'")
        if not np.all(np.isfinite(self.per_slot)):
            raise ValueError("gradient field has non-finite entries")


@dataclass(frozen=True)
class AlignmentReport:
    mean_S: float
    pairwise: np.ndarray
    episode_count: int
    pair_count: int
    skipped_rows: int = 0


@dataclass(frozen=True)
class RankReport:
    singular_values: np.ndarray
    numerical_rank: int
    tolerance: float


@dataclass
class SinkhornProbe:
    """One row per ε plus the assumption checks on the cost matrix."""
    margin: float
    collision_free: bool
    rows: list[dict] = field(default_factory=list)

    @property
    def assumptions_hold(self) -> bool:
        return self.margin > 0 and self.collision_free

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["epsilon", "min_peak_mass", "max_uniform_deviation",
                                                "gradient_gap", "residual", "iterations"])


def _tangent(rows: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Row-wise Π⊥_{z_k} applied to ``rows``."""
    return rows - z * np.sum(z * rows, axis=1, keepdims=True)


def holistic_grad(e: np.ndarray, u: np.ndarray, omega: np.ndarray, P: np.ndarray, reference: str = "raw",
                  y_raw: np.ndarray | None = None) -> GradientField:
    """Gradient field of cos(e, P) with respect to every slot.

    ``raw``: row k = (ω_k/‖u‖) Π⊥_e P, identical directions for every slot.
    ``unit``: row k = (ω_k‖y̌_k‖/‖u‖) Π⊥_{z_k} Π⊥_e P; needs ``y_raw``.
    """
    e, P = np.asarray(e, dtype=np.float64), np.asarray(P, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    shared = (P - e * float(e @ P)) / float(np.linalg.norm(u))
    if reference == "raw":
        return GradientField(omega[:, None] * shared[None, :], "raw")
    if y_raw is None:
        raise ValueError("the unit reference needs the raw projections y_raw")
    y_norm = np.linalg.norm(y_raw, axis=1)
    z = y_raw / y_norm[:, None]
    rows = (omega * y_norm)[:, None] * shared[None, :]
    return GradientField(_tangent(rows, z), "unit")


def chamfer_grad(z_q: np.ndarray, z_c: np.ndarray) -> GradientField:
    """Forward-Chamfer field: row k = (1/K) Π⊥_{z_k} z_c[k*(k)].

    Ties in the row argmax resolve to the lowest support index.
    """
    z_q, z_c = np.asarray(z_q, dtype=np.float64), np.asarray(z_c, dtype=np.float64)
    nearest = np.argmax(cost_matrix(z_q, z_c), axis=1)
    return GradientField(_tangent(z_c[nearest], z_q) / z_q.shape[0], "unit")


def _forward_assignment(z_q_flat: np.ndarray, shape, z_c: np.ndarray, config: MatcherConfig) -> float:
    z_q, _ = normalize_rows(z_q_flat.reshape(shape))
    S = cost_matrix(z_q, z_c)
    return assignment_score(make_coupling(config, S), S)


def assignment_grad(T: np.ndarray, z_q: np.ndarray, z_c: np.ndarray, mode: str = "direct",
                    config: MatcherConfig | None = None, h: float = AppConfig.FINITE_DIFF_STEP) -> GradientField:
    """Gradient of the forward assignment score s_T.

    ``direct`` freezes T: row k = (1/K) Π⊥_{z_k} Σ_k' T_kk' z_c[k'].
    ``full`` re-solves the coupling of ``config`` under every perturbation
    (central differences), so it also carries the flow through T.
    """
    z_q, z_c = np.asarray(z_q, dtype=np.float64), np.asarray(z_c, dtype=np.float64)
    if mode == "direct":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (z_q.shape[0], z_c.shape[0]):
            raise ShapeError(f"coupling {T.shape} does not match {z_q.shape[0]}×{z_c.shape[0]} slot sets")
        return GradientField(_tangent(T @ z_c, z_q) / z_q.shape[0], "unit")
    if mode != "full":
        raise ValueError(f"mode must be 'direct' or 'full', got '{mode}'")
    if config is None:
        raise ValueError("the full assignment gradient needs the matcher config to re-solve the coupling")
    grad = finite_diff_gradient(lambda x: _forward_assignment(x, z_q.shape, z_c, config), z_q.ravel(), h)
    return GradientField(grad.reshape(z_q.shape), "unit")


def field_rank(field_: GradientField, tol_ratio: float = AppConfig.RANK_TOL_RATIO) -> RankReport:
    """Singular values and the count of σ_i ≥ tol_ratio·σ_1 (0 for a zero field)."""
    matrix = field_.per_slot if isinstance(field_, GradientField) else np.asarray(field_, dtype=np.float64)
    if matrix.size == 0:
        raise ShapeError("field_rank needs a non-empty field")
    sigma = np.linalg.svd(matrix, compute_uv=False)
    if sigma[0] == 0.0:
        return RankReport(singular_values=sigma, numerical_rank=0, tolerance=0.0)
    tolerance = tol_ratio * sigma[0]
    return RankReport(singular_values=sigma, numerical_rank=int(np.sum(sigma >= tolerance)), tolerance=tolerance)


def chamfer_query_field(z_q: np.ndarray, omega_q: np.ndarray, pool: np.ndarray, kappa: int) -> GradientField:
    """Gradient of s_Ch(q, pool) with respect to every query z_k.

    Runs through top-κ selection, per-image centering and renormalization,
    then projects onto each slot's tangent space. Unselected slots only feel
    the centering mean.
    """
    z_hat, norms, keep = center_rows(z_q)
    chosen = np.array([k for k in select_topk(omega_q, kappa) if keep[k]], dtype=np.int64)
    A = z_hat[chosen]
    _, _, f_idx, b_idx = chamfer_terms(A, pool)
    d_A = pool[f_idx] / chosen.size
    np.add.at(d_A, b_idx, pool / pool.shape[0])
    d_z_hat = np.zeros_like(z_hat)
    d_z_hat[chosen] = d_A
    radial = np.sum(z_hat * d_z_hat, axis=1, keepdims=True)
    d_centered = np.where(keep[:, None], (d_z_hat - z_hat * radial) / np.where(keep, norms, 1.0)[:, None], 0.0)
    d_z = d_centered - d_centered.mean(axis=0, keepdims=True)
    return GradientField(_tangent(d_z, z_q), "unit")


def _pairwise_cosines(rows: np.ndarray, zero_tol: float = 1e-12):
    norms = np.linalg.norm(rows, axis=1)
    valid = norms > zero_tol
    unit = np.where(valid[:, None], rows / np.where(valid, norms, 1.0)[:, None], 0.0)
    return unit @ unit.T, valid


def field_alignment(field_: GradientField) -> float:
    """Mean pairwise cosine between the non-zero rows of a single field."""
    cosines, valid = _pairwise_cosines(field_.per_slot)
    upper = np.triu_indices(cosines.shape[0], k=1)
    keep = (valid[:, None] & valid[None, :])[upper]
    if not np.any(keep):
        raise ValueError("field has fewer than two non-zero rows")
    return float(np.mean(cosines[upper][keep]))


def episode_query_fields(params: EncoderParams, episode: EpisodeBatch, score_kind: str,
                         kappa: int = AppConfig.TOP_KAPPA, ct_weight: float = 0.5,
                         reference: str = "unit") -> list[GradientField]:
    """Per-query fields of the true-class score.

    ``holistic`` differentiates cos(e_q, P_c); ``ct`` differentiates the
    mixture (1 − w)·cos(e_q, P_c) + w·s_Ch(q, c) trained by the Chamfer
    variant. The raw reference is only defined for ``holistic``.
    """
    if score_kind not in ("holistic", "ct"):
        raise ValueError(f"score_kind must be 'holistic' or 'ct', got '{score_kind}'")
    encoded = encode_images(params, episode.all_phi())
    n_support = episode.support_phi.shape[0]
    classes = episode.classes
    P, _, _ = prototype_matrix(encoded.e[:n_support], episode.support_labels, classes)

    pools = {}
    if score_kind == "ct":
        z_hat, _, keep = center_rows(encoded.z[:n_support])
        for c in classes:
            rows = [z_hat[b, [k for k in select_topk(encoded.omega[b], kappa) if keep[b, k]]]
                    for b in np.flatnonzero(episode.support_labels == c)]
            pools[int(c)] = np.concatenate(rows, axis=0)

    fields = []
    for q, label in enumerate(episode.query_labels):
        b = n_support + q
        j = int(np.searchsorted(classes, label))
        hol = holistic_grad(encoded.e[b], encoded.u[b], encoded.omega[b], P[j], reference, encoded.y_raw[b])
        if score_kind == "holistic":
            fields.append(hol)
            continue
        part = chamfer_query_field(encoded.z[b], encoded.omega[b], pools[int(label)], kappa)
        fields.append(GradientField((1.0 - ct_weight) * hol.per_slot + ct_weight * part.per_slot, "unit"))
    return fields


def alignment_metric(score_kind: str, params: EncoderParams, episodes: list[EpisodeBatch],
                     kappa: int = AppConfig.TOP_KAPPA, ct_weight: float = 0.5,
                     reference: str = "unit") -> AlignmentReport:
    """Mean pairwise cosine S_kk' between per-slot gradients.

    Averaged over the K(K−1)/2 slot pairs of every query of every episode;
    pairs touching a zero gradient row are skipped and counted.

    Raises:
        ValueError: With no episodes, or when every field is zero.
    """
    if not episodes:
        raise ValueError("alignment_metric needs at least one episode")
    K = episodes[0].num_slots
    upper = np.triu_indices(K, k=1)
    sums = np.zeros((K, K))
    counts = np.zeros((K, K))
    values = []
    skipped = 0
    for episode in episodes:
        for field_ in episode_query_fields(params, episode, score_kind, kappa, ct_weight, reference):
            cosines, valid = _pairwise_cosines(field_.per_slot)
            skipped += int(np.sum(~valid))
            pair_ok = valid[:, None] & valid[None, :]
            sums += np.where(pair_ok, cosines, 0.0)
            counts += pair_ok
            values.extend(cosines[upper][pair_ok[upper]].tolist())
    if not values:
        raise ValueError("every gradient field was zero; alignment is undefined")
    pairwise = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    np.fill_diagonal(pairwise, 1.0)
    if skipped:
        logger.debug("alignment (%s): skipped %d zero gradient rows", score_kind, skipped)
    return AlignmentReport(mean_S=float(np.mean(values)), pairwise=pairwise, episode_count=len(episodes),
                           pair_count=len(values), skipped_rows=skipped)


def cost_assumptions(S: np.ndarray) -> tuple[float, bool]:
    """Smallest row margin (best minus runner-up) and whether row argmaxes are distinct."""
    ordered = np.sort(S, axis=1)
    margin = float(np.min(ordered[:, -1] - ordered[:, -2])) if S.shape[1] > 1 else np.inf
    winners = np.argmax(S, axis=1)
    return margin, len(set(winners.tolist())) == winners.size


def sinkhorn_limit_probe(S: np.ndarray, eps_list, z_q: np.ndarray | None = None, z_c: np.ndarray | None = None,
                         max_iters: int = AppConfig.SINKHORN_MAX_ITERS,
                         tol: float = AppConfig.SINKHORN_TOL) -> SinkhornProbe:
    """Sinkhorn behaviour across ε on one cost matrix.

    Per ε: the smallest mass on each row's greedy column, the largest
    deviation from the uniform plan and the gap between the frozen-plan
    gradient and the hard-Chamfer gradient. Without slot vectors the gap is
    measured on the plans themselves (‖T − T_hard‖_F).
    """
    S = np.asarray(S, dtype=np.float64)
    margin, collision_free = cost_assumptions(S)
    probe = SinkhornProbe(margin=margin, collision_free=collision_free)
    if not probe.assumptions_hold:
        logger.warning("Sinkhorn probe assumptions fail: margin=%.3g collision_free=%s", margin, collision_free)
    winners = np.argmax(S, axis=1)
    T_hard = hard_coupling(S)
    rows = np.arange(S.shape[0])
    for eps in eps_list:
        T, residual, iterations = sinkhorn(S, float(eps), max_iters, tol)
        if z_q is not None and z_c is not None:
            gap = float(np.linalg.norm(assignment_grad(T, z_q, z_c).per_slot
                                       - assignment_grad(T_hard, z_q, z_c).per_slot))
        else:
            gap = float(np.linalg.norm(T - T_hard))
        probe.rows.append({
            "epsilon": float(eps),
            "min_peak_mass": float(np.min(T[rows, winners])),
            "max_uniform_deviation": float(np.max(np.abs(T - 1.0 / S.shape[1]))),
            "gradient_gap": gap,
            "residual": residual,
            "iterations": iterations,
        })
    return probe


def random_margin_costs(K: int, margin: float, rng: RngState) -> np.ndarray:
    """K×K costs whose row maxima sit on a random permutation, each ``margin`` above the rest.

    Off-permutation entries are U[0, 0.2]; the winner of each row exceeds its
    row's runner-up by ``margin`` plus U[0, 0.1].
    """
    S = rng.uniform(0.0, 0.2, size=(K, K))
    perm = rng.permutation(K)
    for k in range(K):
        others = np.delete(S[k], perm[k])
        S[k, perm[k]] = others.max() + margin + rng.uniform(0.0, 0.1)
    return S


def genericity_construction(d: int = 16, K: int = 7, theta: float = np.pi / 4) -> tuple[np.ndarray, np.ndarray]:
    """Query slots e_k and support slots cos θ·e_k + sin θ·e_{k+K}.

    The forward-Chamfer field is then (sin θ/K)·e_{k+K} in row k, which has
    rank K.
    """
    if d < 2 * K:
        raise ValueError(f"the construction needs d >= 2K, got d={d}, K={K}")
    eye = np.eye(d)
    z_q = eye[:K].copy()
    z_c = np.cos(theta) * eye[:K] + np.sin(theta) * eye[K:2 * K]
    return z_q, z_c


def matched_unit_sets(K: int, d: int, noise: float, rng: RngState) -> tuple[np.ndarray, np.ndarray]:
    """Random unit query slots and a permuted, perturbed copy as support slots."""
    z_q, _ = normalize_rows(rng.normal(size=(K, d)))
    perm = rng.permutation(K)
    z_c, _ = normalize_rows(z_q[perm] + noise * rng.normal(size=(K, d)))
    return z_q, z_c


def chamfer_rank_genericity(n_configs: int, K: int, d: int, rng: RngState,
                            tol_ratio: float = AppConfig.RANK_TOL_RATIO) -> float:
    """Fraction of random unit configurations whose forward-Chamfer field has rank K."""
    full = 0
    for i in range(n_configs):
        stream = rng.spawn("config", i)
        z_q, _ = normalize_rows(stream.normal(size=(K, d)))
        z_c, _ = normalize_rows(stream.normal(size=(K, d)))
        full += field_rank(chamfer_grad(z_q, z_c), tol_ratio).numerical_rank == K
    return full / n_configs


def holistic_rank_configs(n_configs: int, K: int, D: int, rng: RngState) -> list[tuple[GradientField, dict]]:
    """Random (ω, y̌, P) configurations with their raw-reference holistic fields."""
    out = []
    for i in range(n_configs):
        stream = rng.spawn("config", i)
        y_raw = stream.normal(size=(K, D))
        omega = np.exp(stream.normal(size=K))
        omega /= omega.sum()
        u = omega @ y_raw
        P = l2_normalize(stream.normal(size=D))
        e = l2_normalize(u)
        out.append((holistic_grad(e, u, omega, P, "raw"), {"y_raw": y_raw, "omega": omega, "P": P}))
    return out


def soft_beta_sweep(betas, n_configs: int, K: int, d: int, rng: RngState, noise: float = 0.3) -> pd.DataFrame:
    """Relative size of the coupling-flow term ‖full − direct‖/‖direct‖ for soft Chamfer across β."""
    rows = []
    for beta in betas:
        config = MatcherConfig(kind="soft_chamfer", beta=float(beta))
        gaps = []
        for i in range(n_configs):
            z_q, z_c = matched_unit_sets(K, d, noise, rng.spawn("config", i))
            S = cost_matrix(z_q, z_c)
            direct = assignment_grad(make_coupling(config, S).plan, z_q, z_c, "direct").per_slot
            full = assignment_grad(None, z_q, z_c, "full", config).per_slot
            gaps.append(np.linalg.norm(full - direct) / max(np.linalg.norm(direct), 1e-12))
        rows.append({"beta": float(beta), "relative_indirect": float(np.mean(gaps)), "configs": n_configs})
    return pd.DataFrame(rows)
