"""Holistic cross-entropy and the decorrelation regularizers with their gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from src.config.config import AppConfig
from src.core.errors import ShapeError
from src.encoder.model import Prototype
from src.numerics.tensor_core import as_matrix

DECORRELATION_KINDS = ("cross_correlation", "vicreg_variance", "spectral", "none")


@dataclass(frozen=True)
class DecorrelationConfig:
    """Which regularizer acts on the raw slot projections, and how strongly.

    Every kind is multiplied by ``lambda_d``; ``lambda_d = 1`` gives the
    unweighted VICReg hinge.
    """
    kind: str = AppConfig.DECORRELATION_KIND
    lambda_d: float = AppConfig.LAMBDA_D
    gamma_hinge: float = AppConfig.GAMMA_HINGE
    std_floor: float = AppConfig.STD_FLOOR

    def __post_init__(self):
        if self.kind not in DECORRELATION_KINDS:
            raise ValueError(f"unknown decorrelation kind '{self.kind}', expected one of {DECORRELATION_KINDS}")
        if self.lambda_d < 0:
            raise ValueError(f"lambda_d must be non-negative, got {self.lambda_d}")
        if not self.gamma_hinge > 0:
            raise ValueError(f"gamma_hinge must be positive, got {self.gamma_hinge}")
        if not self.std_floor > 0:
            raise ValueError(f"std_floor must be positive, got {self.std_floor}")


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean CE of integer ``targets`` (column indices) under row-softmax logits.

    Returns:
        tuple: (loss, probabilities, d loss / d logits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    loss = float(-np.mean(log_probs[rows, targets]))
    probs = np.exp(log_probs)
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    return loss, probs, grad / logits.shape[0]


def ce_loss(e_queries: np.ndarray, labels, prototypes: list[Prototype], tau: float) -> tuple[float, np.ndarray]:
    """Mean over queries of −log softmax_c(τ·⟨e_q, P_c⟩) at the true class.

    Raises:
        ValueError: If a label has no prototype.
    """
    class_ids = [p.class_id for p in prototypes]
    index = {c: j for j, c in enumerate(class_ids)}
    missing = sorted({int(l) for l in labels} - set(index))
    if missing:
        raise ValueError(f"labels {missing} have no prototype")
    P = np.stack([p.P for p in prototypes])
    targets = np.array([index[int(l)] for l in labels])
    loss, probs, _ = cross_entropy(tau * (np.asarray(e_queries) @ P.T), targets)
    return loss, probs


def standardize(Y: np.ndarray, std_floor: float = AppConfig.STD_FLOOR) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-dimension z-scores with population std floored at ``std_floor``.

    Returns:
        tuple: (standardized Y, std actually divided by, mask of floored dims).
    """
    Y = as_matrix(Y, "projection batch")
    if Y.shape[0] < 2:
        raise ShapeError(f"standardization needs at least two rows, got {Y.shape[0]}")
    centered = Y - Y.mean(axis=0)
    sigma = np.sqrt(np.mean(centered ** 2, axis=0))
    floored = sigma <= std_floor
    scale = np.where(floored, std_floor, sigma)
    return centered / scale, scale, floored


def correlation_matrix(y_raw_batch: np.ndarray, std_floor: float = AppConfig.STD_FLOOR) -> np.ndarray:
    """C = ŶᵀŶ/n over the standardized (n×D) projection batch."""
    Y_hat, _, _ = standardize(y_raw_batch, std_floor)
    return Y_hat.T @ Y_hat / Y_hat.shape[0]


def off_diag_mean(C: np.ndarray) -> float:
    """Mean absolute off-diagonal entry."""
    C = as_matrix(C, "correlation matrix")
    D = C.shape[0]
    if D < 2:
        raise ShapeError("off-diagonal mean needs D >= 2")
    return float((np.abs(C).sum() - np.abs(np.diag(C)).sum()) / (D * (D - 1)))


def spectral_penalty(Y: np.ndarray) -> float:
    """‖YᵀY/n − I‖_F² on an uncentered batch."""
    Y = as_matrix(Y, "projection batch")
    sigma = Y.T @ Y / Y.shape[0]
    return float(np.sum((sigma - np.eye(Y.shape[1])) ** 2))


def _cross_correlation(Y: np.ndarray, config: DecorrelationConfig, with_grad: bool):
    Y_hat, scale, floored = standardize(Y, config.std_floor)
    n = Y.shape[0]
    C = Y_hat.T @ Y_hat / n
    off = ~np.eye(C.shape[0], dtype=bool)
    loss = config.lambda_d * float(np.sum(C[off] ** 2))
    if not with_grad:
        return loss, None
    dY_hat = 4.0 * config.lambda_d * Y_hat @ np.where(off, C, 0.0) / n
    # batch-norm backward; floored dims are a plain centering divided by a constant
    mean_g = dY_hat.mean(axis=0)
    mean_gy = np.mean(dY_hat * Y_hat, axis=0)
    full = (dY_hat - mean_g - Y_hat * mean_gy) / scale
    flat = (dY_hat - mean_g) / scale
    return loss, np.where(floored, flat, full)


def _vicreg_variance(Y: np.ndarray, config: DecorrelationConfig, with_grad: bool):
    centered = Y - Y.mean(axis=0)
    std = np.sqrt(np.mean(centered ** 2, axis=0) + config.std_floor ** 2)
    gap = config.gamma_hinge - std
    active = gap > 0
    loss = config.lambda_d * float(np.sum(np.where(active, gap, 0.0)))
    if not with_grad:
        return loss, None
    grad = -config.lambda_d * active * centered / (Y.shape[0] * std)
    return loss, grad


def _spectral(Y: np.ndarray, config: DecorrelationConfig, with_grad: bool):
    n, D = Y.shape
    residual = Y.T @ Y / n - np.eye(D)
    loss = config.lambda_d * float(np.sum(residual ** 2))
    if not with_grad:
        return loss, None
    return loss, 4.0 * config.lambda_d * Y @ residual / n


_REGULARIZERS = {
    "cross_correlation": _cross_correlation,
    "vicreg_variance": _vicreg_variance,
    "spectral": _spectral,
}


def decorrelation_terms(config: DecorrelationConfig, y_raw_batch: np.ndarray,
                        with_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Regularizer value and its gradient with respect to the (n×D) batch."""
    Y = as_matrix(y_raw_batch, "projection batch")
    if config.kind == "none":
        return 0.0, np.zeros_like(Y) if with_grad else None
    return _REGULARIZERS[config.kind](Y, config, with_grad)


def decorrelation_loss(config: DecorrelationConfig, y_raw_batch: np.ndarray) -> float:
    loss, _ = decorrelation_terms(config, y_raw_batch, with_grad=False)
    return loss
