"""The assignment family: cost matrices, couplings and the assignment score.

Every matcher is expressed as a row-stochastic coupling T between query slots
(rows) and support slots (columns); the score is ``(1/K_q) Σ T ⊙ S``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from src.config.config import AppConfig
from src.core.errors import ShapeError
from src.numerics.tensor_core import as_matrix, softmax

logger = logging.getLogger(__name__)

MATCHER_KINDS = ("hard_chamfer", "soft_chamfer", "mutual_nn", "sinkhorn", "hungarian")


@dataclass(frozen=True)
class MatcherConfig:
    kind: str = AppConfig.MATCHER_KIND
    beta: float = AppConfig.SOFT_BETA
    epsilon: float = AppConfig.SINKHORN_EPSILON
    max_iters: int = AppConfig.SINKHORN_MAX_ITERS
    tol: float = AppConfig.SINKHORN_TOL
    kappa: int = AppConfig.TOP_KAPPA
    gamma_blend: float = AppConfig.GAMMA_BLEND

    def __post_init__(self):
        if self.kind not in MATCHER_KINDS:
            raise ValueError(f"unknown matcher kind '{self.kind}', expected one of {MATCHER_KINDS}")
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.kind == "soft_chamfer" and not self.beta >= 0:
            raise ValueError(f"soft Chamfer beta must be non-negative, got {self.beta}")
        if self.kind == "sinkhorn" and not self.epsilon > 0:
            raise ValueError(f"Sinkhorn epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.gamma_blend <= 1.0:
            raise ValueError(f"gamma_blend must lie in [0, 1], got {self.gamma_blend}")

    @property
    def requires_square(self) -> bool:
        return self.kind == "hungarian"


@dataclass(frozen=True)
class Coupling:
    """Row-stochastic K_q×K_s coupling produced by one matcher.

    ``residual`` is the largest marginal violation left by an iterative
    solver (0 for closed-form matchers).
    """
    plan: np.ndarray
    kind: str
    residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        if np.any(self.plan < 0):
            raise ValueError(f"{self.kind} coupling has negative entries")
        row_error = float(np.max(np.abs(self.plan.sum(axis=1) - 1.0)))
        if row_error > 1e-9:
            raise ValueError(f"{self.kind} coupling rows deviate from 1 by {row_error:.2e}")


def cost_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cosine matrix S = A Bᵀ of two unit-row sets, clipped to [-1, 1]."""
    A, B = as_matrix(A, "A"), as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"slot sets live in different dimensions: {A.shape[1]} vs {B.shape[1]}")
    return np.clip(A @ B.T, -1.0, 1.0)


def hard_coupling(S: np.ndarray) -> np.ndarray:
    """Row one-hot at the row argmax; ties go to the lowest column index."""
    T = np.zeros_like(S)
    T[np.arange(S.shape[0]), np.argmax(S, axis=1)] = 1.0
    return T


def mutual_nn_coupling(S: np.ndarray) -> np.ndarray:
    """Mutual nearest-neighbour pairs; rows without a mutual partner use the hard rule."""
    rows = np.arange(S.shape[0])
    row_nn = np.argmax(S, axis=1)
    col_nn = np.argmax(S, axis=0)
    T = np.zeros_like(S)
    mutual = col_nn[row_nn] == rows
    T[rows[mutual], row_nn[mutual]] = 1.0
    lonely = ~mutual
    T[lonely] = hard_coupling(S[lonely])
    return T / T.sum(axis=1, keepdims=True)


def sinkhorn(S: np.ndarray, epsilon: float, max_iters: int = AppConfig.SINKHORN_MAX_ITERS,
             tol: float = AppConfig.SINKHORN_TOL) -> tuple[np.ndarray, float, int]:
    """Log-domain Sinkhorn scaling of exp(S/ε).

    Row marginals are all ones and column marginals K_q/K_s, which is the
    all-ones doubly-stochastic convention for square costs. The last update
    is a row update, so the returned plan is row-stochastic to rounding even
    when the column residual has not reached ``tol``.

    Returns:
        tuple[np.ndarray, float, int]: (plan, column-marginal residual, iterations).
    """
    n_rows, n_cols = S.shape
    log_kernel = S / epsilon
    log_a = np.zeros(n_rows)
    log_b = np.full(n_cols, np.log(n_rows / n_cols))
    u = np.zeros(n_rows)
    v = np.zeros(n_cols)
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        u = log_a - logsumexp(log_kernel + v[None, :], axis=1)
        v = log_b - logsumexp(log_kernel + u[:, None], axis=0)
        u = log_a - logsumexp(log_kernel + v[None, :], axis=1)
        plan = np.exp(log_kernel + u[:, None] + v[None, :])
        residual = float(np.max(np.abs(plan.sum(axis=0) - np.exp(log_b))))
        if residual <= tol:
            break
    plan = np.exp(log_kernel + u[:, None] + v[None, :])
    return plan / plan.sum(axis=1, keepdims=True), residual, iterations


def make_coupling(config: MatcherConfig, S: np.ndarray) -> Coupling:
    """Builds the coupling of ``config.kind`` on the cosine matrix ``S``.

    Raises:
        ShapeError: For hungarian on a non-square cost.
        NonFiniteError: If ``S`` has NaN/Inf entries.
    """
    S = as_matrix(S, "cost matrix")
    if config.kind == "hard_chamfer":
        return Coupling(hard_coupling(S), config.kind)
    if config.kind == "soft_chamfer":
        return Coupling(softmax(config.beta * S, axis=1), config.kind)
    if config.kind == "mutual_nn":
        return Coupling(mutual_nn_coupling(S), config.kind)
    if config.kind == "sinkhorn":
        T, residual, iterations = sinkhorn(S, config.epsilon, config.max_iters, config.tol)
        if residual > config.tol:
            level = logging.WARNING if residual > AppConfig.SINKHORN_WARN_RESIDUAL else logging.DEBUG
            logger.log(level, "Sinkhorn did not converge (eps=%g): residual %.3e after %d iterations",
                       config.epsilon, residual, iterations)
        return Coupling(T, config.kind, residual=residual, iterations=iterations)
    if S.shape[0] != S.shape[1]:
        raise ShapeError(f"hungarian matching needs a square cost matrix, got {S.shape}")
    rows, cols = linear_sum_assignment(S, maximize=True)
    T = np.zeros_like(S)
    T[rows, cols] = 1.0
    return Coupling(T, config.kind)


def assignment_score(T, S: np.ndarray) -> float:
    """s_T = (1/K_q) Σ_{k,k'} T_{k,k'} S_{k,k'}; ``T`` may be a Coupling or an array."""
    T = T.plan if isinstance(T, Coupling) else np.asarray(T, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if T.shape != S.shape:
        raise ShapeError(f"coupling {T.shape} and cost {S.shape} differ")
    return float(np.sum(T * S) / S.shape[0])
