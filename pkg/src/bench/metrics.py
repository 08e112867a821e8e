"""Split evaluation, harmonic mean, forgetting and the metrics table."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.bench.episode_batch import EpisodeBatch
from src.bench.episodes import SceneRenderer, sample_episode
from src.bench.splits import SplitPart, SplitSpec
from src.config.config import AppConfig
from src.encoder.losses import correlation_matrix, off_diag_mean
from src.encoder.model import EncoderParams, encode_images
from src.matching.classifier import classify_episode
from src.matching.couplings import MatcherConfig
from src.numerics.tensor_core import RngState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitAccuracy:
    split: str
    accuracy: float
    ci: float
    episodes: int
    per_episode: np.ndarray = field(repr=False, default=None)
    queries_per_episode: int = 0

    def as_row(self) -> dict:
        return {"split": self.split, "accuracy": self.accuracy, "ci95": self.ci, "episodes": self.episodes}


def confidence_interval(values: np.ndarray, z: float = AppConfig.CI_Z) -> float:
    """Normal-approximation half width z·sd/√n (population sd; 0 for one value)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(z * values.std() / np.sqrt(values.size))


def _episode_accuracy(params, matcher_config, split, part, way, shot, queries, renderer, rng) -> float:
    episode = sample_episode(split, part, way, shot, queries, renderer, rng)
    return classify_episode(episode, params, matcher_config).accuracy(episode.query_labels)


def evaluate_split(params: EncoderParams, split: SplitSpec, part: SplitPart, n_episodes: int,
                   matcher_config: MatcherConfig, renderer: SceneRenderer, rng: RngState,
                   way: int = AppConfig.EVAL_WAY, shot: int = AppConfig.EVAL_SHOT,
                   queries: int = AppConfig.EVAL_QUERIES, workers: int = 1) -> SplitAccuracy:
    """Mean episode accuracy with a 95% normal-approximation CI.

    Episode ``i`` always uses the stream ``rng.spawn(part.name, i)``, so the
    result is the same for any ``workers`` count.
    """
    if n_episodes < 1:
        raise ValueError(f"need at least one episode, got {n_episodes}")
    way = min(way, len(part.class_ids))
    streams = [rng.spawn(part.name, i) for i in range(n_episodes)]

    def run(stream):
        return _episode_accuracy(params, matcher_config, split, part, way, shot, queries, renderer, stream)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            accuracies = np.array(list(executor.map(run, streams)))
    else:
        accuracies = np.array([run(s) for s in streams])
    result = SplitAccuracy(split=part.name, accuracy=float(accuracies.mean()),
                           ci=confidence_interval(accuracies), episodes=n_episodes, per_episode=accuracies,
                           queries_per_episode=way * queries)
    logger.info("%s: %d-way %d-shot accuracy %.4f ± %.4f over %d episodes",
                part.name, way, shot, result.accuracy, result.ci, n_episodes)
    return result


def harmonic_mean(values) -> float:
    """n / Σ 1/v_i.

    Raises:
        ValueError: On an empty input or any value <= 0.
    """
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("harmonic mean of no values")
    if np.any(values <= 0):
        raise ValueError(f"harmonic mean needs positive values, got {values.tolist()}")
    return float(values.size / np.sum(1.0 / values))


def forgetting_factor(base_accuracies) -> float:
    """Base-class accuracy after the first session minus after the last one."""
    base_accuracies = list(base_accuracies)
    if len(base_accuracies) < 2:
        raise ValueError("forgetting needs accuracies from at least two sessions")
    return float(base_accuracies[0] - base_accuracies[-1])


def episode_off_diag(params: EncoderParams, episodes: list[EpisodeBatch],
                     std_floor: float = AppConfig.STD_FLOOR) -> float:
    """Mean |C_ij| (i ≠ j) over raw slot projections, averaged across episodes."""
    values = []
    for episode in episodes:
        y_raw = encode_images(params, episode.all_phi()).y_raw
        values.append(off_diag_mean(correlation_matrix(y_raw.reshape(-1, y_raw.shape[2]), std_floor)))
    return float(np.mean(values))


@dataclass
class MetricsTable:
    rows: list[SplitAccuracy] = field(default_factory=list)
    off_diag: float | None = None
    forgetting: float | None = None

    def add(self, result: SplitAccuracy) -> None:
        self.rows.append(result)

    @property
    def harmonic(self) -> float:
        return harmonic_mean([r.accuracy for r in self.rows])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([r.as_row() for r in self.rows])
        summary = {"split": "H_a", "accuracy": self.harmonic if self.rows and all(r.accuracy > 0 for r in self.rows)
                   else 0.0, "ci95": np.nan, "episodes": np.nan}
        extra = [summary]
        if self.off_diag is not None:
            extra.append({"split": "C_off", "accuracy": self.off_diag, "ci95": np.nan, "episodes": np.nan})
        if self.forgetting is not None:
            extra.append({"split": "FF", "accuracy": self.forgetting, "ci95": np.nan, "episodes": np.nan})
        return pd.concat([frame, pd.DataFrame(extra)], ignore_index=True)
