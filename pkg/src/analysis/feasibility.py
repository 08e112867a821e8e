"""Symmetry and feasibility checks of the holistic objective and its regularizers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.bench.episode_batch import EpisodeBatch
from src.core.errors import DegenerateVector
from src.encoder.losses import DecorrelationConfig, correlation_matrix, decorrelation_terms, spectral_penalty
from src.encoder.model import EncoderParams
from src.encoder.objective import ObjectiveConfig, evaluate_objective
from src.numerics.tensor_core import RngState, as_matrix, random_orthogonal, sym_eig

_CE_ONLY = ObjectiveConfig(decorrelation=DecorrelationConfig(kind="none", lambda_d=0.0), ct_weight=0.0)


@dataclass(frozen=True)
class RebaseReport:
    W2: np.ndarray
    off_diag_before: float
    off_diag_after: float
    delta_ce: float


@dataclass(frozen=True)
class SpectralFloorReport:
    loss: float
    floor: float
    slack: float


@dataclass(frozen=True)
class ConflictReport:
    mean_inner: float
    fraction_negative: float
    samples: int


def holistic_ce(params: EncoderParams, episode: EpisodeBatch) -> float:
    """Holistic CE of one episode with prototypes recomputed from ``params``."""
    breakdown, _ = evaluate_objective(params, episode, _CE_ONLY, with_grad=False)
    return breakdown.ce


def ce_rotation_check(params: EncoderParams, episode: EpisodeBatch, rng: RngState | None = None,
                      U: np.ndarray | None = None) -> float:
    """|CE(U·W2) − CE(W2)| for a given or random orthogonal left factor U."""
    if U is None:
        U = random_orthogonal(params.dim, rng or RngState(0))
    rotated = params.with_head(U @ params.head.W2)
    return abs(holistic_ce(rotated, episode) - holistic_ce(params, episode))


def ce_scale_check(params: EncoderParams, episode: EpisodeBatch, c: float) -> float:
    """|CE(c·W2) − CE(W2)| for a positive scalar c."""
    if not c > 0:
        raise ValueError(f"scale must be positive, got {c}")
    return abs(holistic_ce(params.with_head(c * params.head.W2), episode) - holistic_ce(params, episode))


def row_scaling_control(params: EncoderParams, episode: EpisodeBatch, row: int = 0, factor: float = 3.0) -> float:
    """|ΔCE| after scaling a single row of W2, a non-orthogonal change."""
    W2 = params.head.W2.copy()
    W2[row] *= factor
    return abs(holistic_ce(params.with_head(W2), episode) - holistic_ce(params, episode))


def rotation_orbit_derivative(params: EncoderParams, episode: EpisodeBatch, rng: RngState,
                              step: float = 1e-4) -> tuple[float, float]:
    """Directional derivative of CE along W2 → exp(tA)·W2 for a random skew A.

    Returns:
        tuple[float, float]: (central-difference derivative at t = 0, CE
            change after one step along the exact orbit).
    """
    G = rng.normal(size=(params.dim, params.dim))
    A = (G - G.T) / np.linalg.norm(G - G.T)
    W2 = params.head.W2
    base = holistic_ce(params, episode)
    plus = holistic_ce(params.with_head(W2 + step * A @ W2), episode)
    minus = holistic_ce(params.with_head(W2 - step * A @ W2), episode)
    # exact orbit point via the Cayley transform, which is orthogonal for skew A
    eye = np.eye(params.dim)
    cayley = np.linalg.solve(eye - 0.5 * step * A, eye + 0.5 * step * A)
    moved = holistic_ce(params.with_head(cayley @ W2), episode)
    return (plus - minus) / (2.0 * step), abs(moved - base)


def _off_diag_frobenius(C: np.ndarray) -> float:
    return float(np.sqrt(np.sum(C ** 2) - np.sum(np.diag(C) ** 2)))


def cc_rebase(params: EncoderParams, episode: EpisodeBatch, singular_tol: float = 1e-12) -> RebaseReport:
    """Rotates the head onto the eigenbasis of the projection covariance.

    With Σ_y = V Λ Vᵀ the centred covariance of every raw slot projection in
    the episode, W2' = Vᵀ W2 makes Σ_y diagonal, so the cross-correlation
    off-diagonals vanish while CE is unchanged.

    Raises:
        DegenerateVector: If Σ_y is singular on the batch.
    """
    D = params.dim
    phi = episode.all_phi().reshape(-1, D)
    Y = phi @ params.head.W2.T
    centered = Y - Y.mean(axis=0)
    sigma = centered.T @ centered / Y.shape[0]
    sigma = 0.5 * (sigma + sigma.T)
    eigenvalues, V = sym_eig(sigma)
    if eigenvalues[-1] <= singular_tol * max(eigenvalues[0], 1.0):
        raise DegenerateVector(f"projection covariance is singular (smallest eigenvalue {eigenvalues[-1]:.3e})")
    W2_new = V.T @ params.head.W2
    rebased = params.with_head(W2_new)
    before = _off_diag_frobenius(correlation_matrix(Y))
    after = _off_diag_frobenius(correlation_matrix(phi @ W2_new.T))
    return RebaseReport(W2=W2_new, off_diag_before=before, off_diag_after=after,
                        delta_ce=abs(holistic_ce(rebased, episode) - holistic_ce(params, episode)))


def spectral_floor(d: int) -> float:
    """(d − 1)²/d, the least ‖Σ_z − I‖_F² reachable with unit-norm rows."""
    return (d - 1) ** 2 / d


def spectral_floor_check(z_batch: np.ndarray) -> SpectralFloorReport:
    z_batch = as_matrix(z_batch, "unit batch")
    loss = spectral_penalty(z_batch)
    floor = spectral_floor(z_batch.shape[1])
    return SpectralFloorReport(loss=loss, floor=floor, slack=loss - floor)


def tight_clusters(n_classes: int, per_class: int, D: int, radius: float, rng: RngState) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs of the given radius around random unit centres."""
    centres = rng.normal(size=(n_classes, D))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), per_class)
    return centres[labels] + radius * rng.normal(size=(labels.size, D)), labels


def vicreg_within_class_conflict(Y: np.ndarray, labels: np.ndarray, config: DecorrelationConfig | None = None) -> ConflictReport:
    """Inner product of the hinge anti-gradient's within-class part with CE contraction.

    The contraction direction of sample i is (class mean − y_i). A negative
    mean means the variance hinge pushes samples away from their class mean.
    """
    config = config or DecorrelationConfig(kind="vicreg_variance", lambda_d=1.0)
    if config.kind != "vicreg_variance":
        raise ValueError("the within-class conflict is defined for the VICReg variance hinge")
    Y = as_matrix(Y, "cluster batch")
    labels = np.asarray(labels)
    _, grad = decorrelation_terms(config, Y)
    descent = -grad
    class_ids, owner = np.unique(labels, return_inverse=True)
    descent_means = np.stack([descent[owner == j].mean(axis=0) for j in range(class_ids.size)])
    y_means = np.stack([Y[owner == j].mean(axis=0) for j in range(class_ids.size)])
    within = descent - descent_means[owner]
    contraction = y_means[owner] - Y
    inner = np.sum(within * contraction, axis=1)
    return ConflictReport(mean_inner=float(inner.mean()), fraction_negative=float(np.mean(inner < 0)),
                          samples=int(inner.size))
