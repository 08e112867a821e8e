"""Session-by-session encoder training with an exemplar replay buffer."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.bench.concepts import build_pool
from src.bench.episode_batch import EpisodeBatch
from src.bench.episodes import SceneRenderer, sample_episode
from src.bench.metrics import evaluate_split
from src.bench.splits import SplitPart, SplitSpec, make_splits
from src.config.experiment_config import ExperimentConfig
from src.core.errors import CheckFailure
from src.encoder.model import EncoderParams
from src.encoder.trainer import OptimizerState, train_step
from src.numerics.tensor_core import RngState
from src.vision.slot_attention import oracle_params, random_params

logger = logging.getLogger(__name__)


class ReplayBuffer:
    """Up to ``capacity`` stored slot-aggregate sets per class.

    Aggregates are enough because everything upstream of the router is frozen.
    """
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._store: dict[int, deque] = {}

    def add(self, class_id: int, phi: np.ndarray) -> None:
        self._store.setdefault(int(class_id), deque(maxlen=self.capacity)).append(np.array(phi, copy=True))

    def classes(self) -> list[int]:
        return sorted(self._store)

    def __len__(self) -> int:
        return sum(len(items) for items in self._store.values())

    def count(self, class_id: int) -> int:
        return len(self._store.get(int(class_id), ()))

    def sample(self, class_id: int, n: int, rng: RngState) -> list[np.ndarray]:
        """``n`` stored sets of one class; draws with replacement when fewer are stored."""
        items = self._store.get(int(class_id))
        if not items:
            raise KeyError(f"no exemplars stored for class {class_id}")
        index = rng.choice(len(items), size=n, replace=len(items) < n)
        return [items[i] for i in index]


@dataclass(frozen=True)
class SessionLog:
    session: int
    mean_loss: float
    final_loss: float
    seen_accuracy: float
    base_accuracy: float
    replay_size: int


@dataclass
class ContinualResult:
    params: EncoderParams
    split: SplitSpec
    renderer: SceneRenderer
    sessions: list[SessionLog] = field(default_factory=list)
    loss_curve: list[dict] = field(default_factory=list)


def build_benchmark(config: ExperimentConfig, rng: RngState) -> tuple[SplitSpec, SceneRenderer]:
    """Concept pool, splits and the frozen renderer, all derived from ``rng``."""
    bench, model = config.benchmark, config.model
    pool = build_pool(bench.num_concepts, model.dim, bench.spread, bench.max_overlap, rng.spawn("pool"))
    split = make_splits(pool, bench.num_train_concepts, bench.num_sessions, bench.classes_per_session,
                        rng.spawn("splits"), tuple(bench.extra_parts), tuple(bench.pro_grid))
    if model.slot_mode == "oracle":
        slot_params = oracle_params(model.dim, model.oracle_sharpness, model.slot_iterations)
    else:
        slot_params = random_params(model.dim, rng.spawn("slot_params"), model.slot_iterations)
    renderer = SceneRenderer(pool, slot_params, model.num_slots, tuple(bench.grid),
                             bench.patches_per_cell, bench.noise)
    return split, renderer


def _training_episode(config: ExperimentConfig, split: SplitSpec, renderer: SceneRenderer,
                      session_classes: tuple[int, ...], buffer: ReplayBuffer | None,
                      rng: RngState) -> EpisodeBatch:
    """Half the classes come from the buffer when it holds past-session classes."""
    t = config.training
    way = min(t.way, len(session_classes) + (len(buffer.classes()) if buffer else 0))
    replay_classes = buffer.classes() if buffer else []
    n_replay = min(way // 2, len(replay_classes)) if replay_classes else 0
    if n_replay == 0:
        return sample_episode(split, SplitPart("train", session_classes), min(way, len(session_classes)),
                              t.shot, t.queries, renderer, rng)

    n_current = min(way - n_replay, len(session_classes))
    current = sorted(int(c) for c in rng.choice(np.array(session_classes), size=n_current, replace=False))
    replayed = sorted(int(c) for c in rng.choice(np.array(replay_classes), size=n_replay, replace=False))
    support, support_labels, query, query_labels = [], [], [], []
    for class_id in sorted(current + replayed):
        if class_id in replayed:
            images = buffer.sample(class_id, t.shot + t.queries, rng.spawn("replay", class_id))
        else:
            images = [renderer.render(split, class_id, rng.spawn("image", class_id, i)).phi
                      for i in range(t.shot + t.queries)]
        support += images[: t.shot]
        support_labels += [class_id] * t.shot
        query += images[t.shot:]
        query_labels += [class_id] * t.queries
    return EpisodeBatch(np.stack(support), np.array(support_labels), np.stack(query), np.array(query_labels),
                        way=n_current + n_replay, shot=t.shot, queries_per_class=t.queries)


def run_continual_training(config: ExperimentConfig, workers: int = 1,
                           on_status_message: Callable[[str], None] | None = None,
                           on_session_complete: Callable[[SessionLog], None] | None = None) -> ContinualResult:
    """Trains router and head over the configured sessions.

    Slot attention and the concept pool stay frozen; a fingerprint taken
    before training is compared after every session.

    Raises:
        CheckFailure: If the frozen renderer changed during training.
        NumericalFailure: Propagated from :func:`train_step`.
    """
    root = RngState(config.seed)
    split, renderer = build_benchmark(config, root)
    frozen = renderer.fingerprint()
    params = EncoderParams.identity(config.model.dim, config.model.hidden_dim, root.spawn("init"),
                                    tau=config.model.initial_temperature,
                                    router_scale=config.model.router_init_scale)
    state = OptimizerState.zeros(params)
    objective, adam, matcher = config.objective_config(), config.adam_config(), config.matcher_config()
    buffer = ReplayBuffer(config.training.replay_per_class) if config.training.replay_enabled else None
    result = ContinualResult(params=params, split=split, renderer=renderer)
    ev = config.evaluation

    seen: list[int] = []
    for s, session_classes in enumerate(split.sessions):
        losses = []
        for step in range(config.training.steps_per_session):
            episode = _training_episode(config, split, renderer, session_classes, buffer,
                                        root.spawn("train", s, step))
            params, state, breakdown = train_step(params, episode, state, objective, adam)
            losses.append(breakdown.total)
            result.loss_curve.append({"session": s, "step": step, **breakdown.as_dict()})

        if buffer is not None:
            for class_id in session_classes:
                for i in range(config.training.replay_per_class):
                    buffer.add(class_id, renderer.render(split, class_id, root.spawn("exemplar", class_id, i)).phi)
        if renderer.fingerprint() != frozen:
            raise CheckFailure("frozen_backbone", f"slot attention or concept pool changed during session {s}")

        seen.extend(session_classes)
        eval_rng = root.spawn("session_eval", s)
        seen_acc = evaluate_split(params, split, SplitPart("seen", tuple(seen)), ev.session_episodes, matcher,
                                  renderer, eval_rng, ev.way, ev.shot, ev.queries, workers)
        base_acc = evaluate_split(params, split, SplitPart("base", split.sessions[0]), ev.session_episodes,
                                  matcher, renderer, root.spawn("base_eval"), ev.way, ev.shot, ev.queries,
                                  workers)
        log = SessionLog(session=s, mean_loss=float(np.mean(losses)) if losses else float("nan"),
                         final_loss=losses[-1] if losses else float("nan"),
                         seen_accuracy=seen_acc.accuracy, base_accuracy=base_acc.accuracy,
                         replay_size=len(buffer) if buffer is not None else 0)
        result.sessions.append(log)
        message = (f"session {s}: loss {log.mean_loss:.4f}, seen-class accuracy {log.seen_accuracy:.4f}, "
                   f"base-class accuracy {log.base_accuracy:.4f}")
        if on_status_message:
            on_status_message(message)
        else:
            logger.info(message)
        if on_session_complete:
            on_session_complete(log)

    result.params = params
    return result
