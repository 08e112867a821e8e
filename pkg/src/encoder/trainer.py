"""Adam updates of the encoder parameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.bench.episode_batch import EpisodeBatch
from src.config.config import AppConfig
from src.core.errors import NumericalFailure
from src.encoder.model import EncoderParams
from src.encoder.objective import LossBreakdown, ObjectiveConfig, evaluate_objective

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = AppConfig.LEARNING_RATE
    beta1: float = AppConfig.ADAM_BETA1
    beta2: float = AppConfig.ADAM_BETA2
    eps: float = AppConfig.ADAM_EPS

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class OptimizerState:
    """First/second moment estimates over the flat parameter vector."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, params: EncoderParams) -> "OptimizerState":
        size = params.to_vector().size
        return cls(m=np.zeros(size), v=np.zeros(size), step=0)


def adam_update(vector: np.ndarray, grad: np.ndarray, state: OptimizerState,
                config: AdamConfig) -> tuple[np.ndarray, OptimizerState]:
    step = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad ** 2
    m_hat = m / (1.0 - config.beta1 ** step)
    v_hat = v / (1.0 - config.beta2 ** step)
    updated = vector - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return updated, OptimizerState(m=m, v=v, step=step)


def train_step(params: EncoderParams, episode: EpisodeBatch, optimizer_state: OptimizerState,
               objective: ObjectiveConfig | None = None,
               adam: AdamConfig | None = None) -> tuple[EncoderParams, OptimizerState, LossBreakdown]:
    """One Adam step on the episode loss.

    Raises:
        NumericalFailure: If the loss or any gradient entry is not finite;
            the parameters passed in are left untouched.
    """
    adam = adam or AdamConfig()
    breakdown, grads = evaluate_objective(params, episode, objective, with_grad=True)
    grad_vector = grads.to_vector()
    if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad_vector)):
        raise NumericalFailure(
            f"non-finite training signal at step {optimizer_state.step + 1}: "
            f"ce={breakdown.ce} decorrelation={breakdown.decorrelation} ct={breakdown.ct}"
        )
    vector, new_state = adam_update(params.to_vector(), grad_vector, optimizer_state, adam)
    new_params = EncoderParams.from_vector(vector, params.dim, params.hidden_dim)
    logger.debug("step %d total=%.5f ce=%.5f decorrelation=%.5f tau=%.3f", new_state.step,
                 breakdown.total, breakdown.ce, breakdown.decorrelation, new_params.head.tau)
    return new_params, new_state, breakdown
