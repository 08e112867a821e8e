"""Compositional train / evaluation splits over a concept pool."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from src.config.config import AppConfig
from src.bench.concepts import ConceptPool, SceneClass, concept_pairs
from src.numerics.tensor_core import RngState

logger = logging.getLogger(__name__)

EXTRA_PARTS = ("sub", "non", "pro")


@dataclass(frozen=True)
class SplitPart:
    """Class ids of one split plus how its scenes are rendered.

    ``spread_scale`` and ``noise_scale`` multiply the benchmark's concept
    spread and background noise; ``grid`` overrides the scene grid.
    """
    name: str
    class_ids: tuple[int, ...]
    spread_scale: float = 1.0
    noise_scale: float = 1.0
    grid: tuple[int, int] | None = None


@dataclass(frozen=True)
class SplitSpec:
    classes: dict[int, SceneClass]
    train_classes: tuple[int, ...]
    sys_classes: tuple[int, ...]
    noc_classes: tuple[int, ...]
    sessions: tuple[tuple[int, ...], ...]
    extra_parts: dict[str, SplitPart] = field(default_factory=dict)

    def concepts_of(self, class_ids) -> set[int]:
        return {c for class_id in class_ids for c in self.classes[class_id].concept_ids}

    def check_hygiene(self) -> None:
        """Raises ValueError if novel-concept classes reuse a training concept."""
        shared = self.concepts_of(self.noc_classes) & self.concepts_of(self.train_classes)
        if shared:
            raise ValueError(f"noc classes reuse training concepts {sorted(shared)}")
        unseen = self.concepts_of(self.sys_classes) - self.concepts_of(self.train_classes)
        if unseen:
            raise ValueError(f"sys classes use concepts {sorted(unseen)} never seen in training")

    def part(self, name: str) -> SplitPart:
        if name == "train":
            return SplitPart("train", self.train_classes)
        if name == "sys":
            return SplitPart("sys", self.sys_classes)
        if name == "noc":
            return SplitPart("noc", self.noc_classes)
        if name in self.extra_parts:
            return self.extra_parts[name]
        raise KeyError(f"unknown split part '{name}'")

    @property
    def part_names(self) -> list[str]:
        return ["sys", "noc"] + sorted(self.extra_parts)


def make_splits(pool: ConceptPool, n_train_concepts: int = AppConfig.NUM_TRAIN_CONCEPTS,
                n_sessions: int = AppConfig.NUM_SESSIONS,
                classes_per_session: int = AppConfig.CLASSES_PER_SESSION,
                rng: RngState | None = None, extra_parts: tuple[str, ...] = (),
                pro_grid: tuple[int, int] = AppConfig.PRO_GRID_SHAPE) -> SplitSpec:
    """Builds train / sys / noc classes (and optional sub / non / pro parts).

    Concepts ``0..n_train_concepts-1`` are seen in training; the rest are held
    out. Training classes are a random subset of the seen-concept pairs, sys
    classes are the remaining seen pairs, noc classes are all held-out pairs.

    Raises:
        ValueError: If there are too few pairs for the requested sessions or
            for at least one sys and one noc class.
    """
    rng = rng or RngState(AppConfig.SEED)
    unknown = set(extra_parts) - set(EXTRA_PARTS)
    if unknown:
        raise ValueError(f"unknown extra split parts {sorted(unknown)}, expected a subset of {EXTRA_PARTS}")
    seen = range(n_train_concepts)
    held_out = range(n_train_concepts, pool.size)
    seen_pairs = concept_pairs(seen)
    held_pairs = concept_pairs(held_out)
    n_train = n_sessions * classes_per_session
    if n_train >= len(seen_pairs):
        raise ValueError(f"{n_train_concepts} training concepts give {len(seen_pairs)} pairs; "
                         f"{n_train} training classes leave no sys pair")
    if not held_pairs:
        raise ValueError(f"{pool.size - n_train_concepts} held-out concepts cannot form a noc pair")

    order = rng.permutation(len(seen_pairs))
    train_pairs = [seen_pairs[i] for i in order[:n_train]]
    sys_pairs = [seen_pairs[i] for i in order[n_train:]]

    classes: dict[int, SceneClass] = {}

    def register(concepts) -> int:
        class_id = len(classes)
        classes[class_id] = SceneClass(class_id, tuple(concepts))
        return class_id

    train = tuple(register(p) for p in train_pairs)
    sys_ids = tuple(register(p) for p in sys_pairs)
    noc = tuple(register(p) for p in held_pairs)
    sessions = tuple(train[s * classes_per_session:(s + 1) * classes_per_session] for s in range(n_sessions))

    parts: dict[str, SplitPart] = {}
    if "sub" in extra_parts:
        parts["sub"] = SplitPart("sub", train, spread_scale=2.0)
    if "non" in extra_parts:
        parts["non"] = SplitPart("non", train, noise_scale=2.0)
    if "pro" in extra_parts:
        triples = concept_pairs(seen, arity=3)
        picks = rng.permutation(len(triples))[:classes_per_session]
        parts["pro"] = SplitPart("pro", tuple(register(triples[i]) for i in sorted(picks)),
                                 grid=tuple(pro_grid))

    split = SplitSpec(classes=classes, train_classes=train, sys_classes=sys_ids, noc_classes=noc,
                      sessions=sessions, extra_parts=parts)
    split.check_hygiene()
    logger.info("splits: %d train classes in %d sessions, %d sys, %d noc, extra parts %s",
                len(train), n_sessions, len(sys_ids), len(noc), sorted(parts) or "none")
    return split
