"""Typed experiment configuration loaded from YAML.

Every field default comes from :class:`AppConfig`. Loading is strict: an
unknown key, a value of the wrong type or an out-of-range value is reported
by its dotted path, and all problems of a file are reported together.
"""
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import yaml

from src.config.config import AppConfig
from src.core.errors import ConfigError
from src.encoder.losses import DECORRELATION_KINDS, DecorrelationConfig
from src.encoder.objective import ObjectiveConfig
from src.encoder.trainer import AdamConfig
from src.matching.couplings import MATCHER_KINDS, MatcherConfig

SLOT_MODES = ("oracle", "random")
SPLIT_NAMES = ("sys", "noc", "sub", "non", "pro")
GRADLAB_CHECKS = ("alignment", "rank", "sinkhorn", "feasibility", "oracle")


@dataclass
class ModelSection:
    dim: int = AppConfig.FEATURE_DIM
    num_slots: int = AppConfig.NUM_SLOTS
    hidden_dim: int = AppConfig.ROUTER_HIDDEN_DIM
    slot_iterations: int = AppConfig.SLOT_ITERATIONS
    slot_mode: str = "oracle"
    oracle_sharpness: float = AppConfig.ORACLE_SHARPNESS
    initial_temperature: float = AppConfig.INITIAL_TEMPERATURE
    router_init_scale: float = AppConfig.ROUTER_INIT_SCALE

    def validate(self) -> list[str]:
        problems = []
        if self.dim < 2:
            problems.append("dim must be >= 2")
        if self.num_slots < 2:
            problems.append("num_slots must be >= 2")
        if self.hidden_dim < 1:
            problems.append("hidden_dim must be >= 1")
        if self.slot_iterations < 1:
            problems.append("slot_iterations must be >= 1")
        if self.slot_mode not in SLOT_MODES:
            problems.append(f"slot_mode must be one of {SLOT_MODES}")
        if self.initial_temperature <= 0:
            problems.append("initial_temperature must be positive")
        return problems


@dataclass
class LossSection:
    decorrelation_kind: str = AppConfig.DECORRELATION_KIND
    lambda_d: float = AppConfig.LAMBDA_D
    gamma_hinge: float = AppConfig.GAMMA_HINGE
    std_floor: float = AppConfig.STD_FLOOR
    ct_weight: float = AppConfig.CT_WEIGHT
    stop_prototype_gradient: bool = AppConfig.PROTOTYPE_STOP_GRADIENT

    def validate(self) -> list[str]:
        problems = []
        if self.decorrelation_kind not in DECORRELATION_KINDS:
            problems.append(f"decorrelation_kind must be one of {DECORRELATION_KINDS}")
        if self.lambda_d < 0:
            problems.append("lambda_d must be >= 0")
        if self.gamma_hinge <= 0:
            problems.append("gamma_hinge must be positive")
        if self.std_floor <= 0:
            problems.append("std_floor must be positive")
        if not 0.0 <= self.ct_weight <= 1.0:
            problems.append("ct_weight must lie in [0, 1]")
        return problems


@dataclass
class MatcherSection:
    kind: str = AppConfig.MATCHER_KIND
    beta: float = AppConfig.SOFT_BETA
    epsilon: float = AppConfig.SINKHORN_EPSILON
    max_iters: int = AppConfig.SINKHORN_MAX_ITERS
    tol: float = AppConfig.SINKHORN_TOL
    kappa: int = AppConfig.TOP_KAPPA
    gamma_blend: float = AppConfig.GAMMA_BLEND

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in MATCHER_KINDS:
            problems.append(f"kind must be one of {MATCHER_KINDS}")
        if self.beta < 0:
            problems.append("beta must be >= 0")
        if self.epsilon <= 0:
            problems.append("epsilon must be positive")
        if self.max_iters < 1:
            problems.append("max_iters must be >= 1")
        if self.kappa < 1:
            problems.append("kappa must be >= 1")
        if not 0.0 <= self.gamma_blend <= 1.0:
            problems.append("gamma_blend must lie in [0, 1]")
        return problems


@dataclass
class TrainingSection:
    learning_rate: float = AppConfig.LEARNING_RATE
    beta1: float = AppConfig.ADAM_BETA1
    beta2: float = AppConfig.ADAM_BETA2
    eps: float = AppConfig.ADAM_EPS
    steps_per_session: int = AppConfig.STEPS_PER_SESSION
    replay_enabled: bool = True
    replay_per_class: int = AppConfig.REPLAY_PER_CLASS
    way: int = AppConfig.TRAIN_WAY
    shot: int = AppConfig.TRAIN_SHOT
    queries: int = AppConfig.TRAIN_QUERIES

    def validate(self) -> list[str]:
        problems = []
        if self.learning_rate < 0:
            problems.append("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("beta1 and beta2 must lie in [0, 1)")
        if self.steps_per_session < 0:
            problems.append("steps_per_session must be >= 0")
        if self.replay_per_class < 1:
            problems.append("replay_per_class must be >= 1")
        if min(self.way, self.shot, self.queries) < 1:
            problems.append("way, shot and queries must be >= 1")
        return problems


@dataclass
class BenchmarkSection:
    num_concepts: int = AppConfig.NUM_CONCEPTS
    num_train_concepts: int = AppConfig.NUM_TRAIN_CONCEPTS
    num_sessions: int = AppConfig.NUM_SESSIONS
    classes_per_session: int = AppConfig.CLASSES_PER_SESSION
    grid: list = field(default_factory=lambda: list(AppConfig.GRID_SHAPE))
    pro_grid: list = field(default_factory=lambda: list(AppConfig.PRO_GRID_SHAPE))
    patches_per_cell: int = AppConfig.PATCHES_PER_CELL
    spread: float = AppConfig.CONCEPT_SPREAD
    noise: float = AppConfig.PATCH_NOISE
    max_overlap: float = AppConfig.MAX_CONCEPT_OVERLAP
    extra_parts: list = field(default_factory=list)

    def validate(self) -> list[str]:
        problems = []
        if not 2 <= self.num_train_concepts < self.num_concepts - 1:
            problems.append("num_train_concepts must leave at least two held-out concepts")
        if self.num_sessions < 1 or self.classes_per_session < 1:
            problems.append("num_sessions and classes_per_session must be >= 1")
        for name in ("grid", "pro_grid"):
            value = getattr(self, name)
            if len(value) != 2 or not all(isinstance(v, int) and v >= 1 for v in value):
                problems.append(f"{name} must be [rows, cols] of positive integers")
        if self.patches_per_cell < 1:
            problems.append("patches_per_cell must be >= 1")
        if self.spread < 0 or self.noise < 0:
            problems.append("spread and noise must be >= 0")
        if not 0 < self.max_overlap < 1:
            problems.append("max_overlap must lie in (0, 1)")
        bad = set(self.extra_parts) - {"sub", "non", "pro"}
        if bad:
            problems.append(f"extra_parts has unknown entries {sorted(bad)}")
        return problems


@dataclass
class EvaluationSection:
    way: int = AppConfig.EVAL_WAY
    shot: int = AppConfig.EVAL_SHOT
    queries: int = AppConfig.EVAL_QUERIES
    episodes: int = AppConfig.EVAL_EPISODES
    session_episodes: int = AppConfig.SESSION_EVAL_EPISODES
    splits: list = field(default_factory=lambda: ["sys", "noc"])

    def validate(self) -> list[str]:
        problems = []
        if min(self.way, self.shot, self.queries) < 1:
            problems.append("way, shot and queries must be >= 1")
        if self.episodes < 1 or self.session_episodes < 1:
            problems.append("episodes and session_episodes must be >= 1")
        bad = set(self.splits) - set(SPLIT_NAMES)
        if bad:
            problems.append(f"splits has unknown entries {sorted(bad)}")
        return problems


@dataclass
class GradlabSection:
    checks: list = field(default_factory=lambda: list(GRADLAB_CHECKS))
    alignment_episodes: int = AppConfig.ALIGNMENT_EPISODES
    rank_configs: int = AppConfig.HOLISTIC_RANK_CONFIGS
    sinkhorn_matrices: int = AppConfig.SINKHORN_PROBE_MATRICES
    sinkhorn_epsilons: list = field(default_factory=lambda: list(AppConfig.SINKHORN_PROBE_EPSILONS))
    spectral_batches: int = AppConfig.SPECTRAL_FLOOR_BATCHES
    oracle_episodes: int = AppConfig.ORACLE_EPISODES
    corrupt_gradient: bool = False

    def validate(self) -> list[str]:
        problems = []
        bad = set(self.checks) - set(GRADLAB_CHECKS)
        if bad:
            problems.append(f"checks has unknown entries {sorted(bad)}")
        if min(self.alignment_episodes, self.rank_configs, self.sinkhorn_matrices,
               self.spectral_batches, self.oracle_episodes) < 1:
            problems.append("episode and batch counts must be >= 1")
        if not self.sinkhorn_epsilons or any(not e > 0 for e in self.sinkhorn_epsilons):
            problems.append("sinkhorn_epsilons must be a non-empty list of positive values")
        return problems


@dataclass
class OutputSection:
    dir: str = AppConfig.OUTPUT_DIR
    plots: bool = False
    log_level: str = AppConfig.LOG_LEVEL

    def validate(self) -> list[str]:
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            return ["log_level must be DEBUG, INFO, WARNING or ERROR"]
        return []


SECTIONS = {
    "model": ModelSection,
    "loss": LossSection,
    "matcher": MatcherSection,
    "training": TrainingSection,
    "benchmark": BenchmarkSection,
    "evaluation": EvaluationSection,
    "gradlab": GradlabSection,
    "output": OutputSection,
}


def _type_problem(path: str, expected: type, value: Any) -> str | None:
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif expected is list:
        ok = isinstance(value, (list, tuple))
    else:
        ok = isinstance(value, expected)
    return None if ok else f"{path}: expected {expected.__name__}, got {type(value).__name__} {value!r}"


def _build_section(name: str, cls: type, raw: Any, problems: list[str]):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append(f"{name}: expected a mapping, got {type(raw).__name__}")
        return cls()
    hints = get_type_hints(cls)
    values = {}
    for key, value in raw.items():
        path = f"{name}.{key}"
        if key not in hints:
            problems.append(f"{path}: unknown key")
            continue
        problem = _type_problem(path, hints[key], value)
        if problem:
            problems.append(problem)
            continue
        if hints[key] is float:
            value = float(value)
        elif hints[key] is list:
            value = list(value)
        values[key] = value
    section = cls(**values)
    problems.extend(f"{name}: {p}" for p in section.validate())
    return section


@dataclass
class ExperimentConfig:
    seed: int = AppConfig.SEED
    workers: int = AppConfig.WORKERS
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    matcher: MatcherSection = field(default_factory=MatcherSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    gradlab: GradlabSection = field(default_factory=GradlabSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        """Strictly parses a nested mapping.

        Raises:
            ConfigError: Listing every unknown key, type mismatch and range
                violation.
        """
        data = data or {}
        problems: list[str] = []
        if not isinstance(data, dict):
            raise ConfigError([f"top level: expected a mapping, got {type(data).__name__}"])
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key in ("seed", "workers"):
                problem = _type_problem(key, int, value)
                if problem:
                    problems.append(problem)
                else:
                    kwargs[key] = value
            elif key in SECTIONS:
                kwargs[key] = _build_section(key, SECTIONS[key], value, problems)
            else:
                problems.append(f"{key}: unknown key")
        if kwargs.get("workers", 1) < 1:
            problems.append("workers: must be >= 1")
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        with path.open("r", encoding="utf-8") as handle:
            try:
                data = yaml.safe_load(handle)
            except yaml.YAMLError as exc:
                raise ConfigError([f"{path}: invalid YAML ({exc})"]) from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as handle:
            yaml.safe_dump(self.to_dict(), handle, sort_keys=True)

    def config_hash(self) -> str:
        """First 16 hex chars of SHA-256 over the canonical JSON of the computation settings.

        Worker count and output settings do not change results and are excluded.
        """
        data = self.to_dict()
        data.pop("workers")
        data.pop("output")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_override(self, dotted: str, value: Any) -> "ExperimentConfig":
        """Copy with one dotted key replaced, re-validated like a loaded file."""
        data = self.to_dict()
        target = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                raise ConfigError([f"{dotted}: unknown section '{part}'"])
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError([f"{dotted}: unknown key"])
        target[parts[-1]] = value
        return ExperimentConfig.from_dict(data)

    def resolve_workers(self, cli_workers: int | None = None) -> int:
        """CLI flag, then the environment variable, then the config value."""
        if cli_workers is not None:
            return max(1, int(cli_workers))
        env = os.environ.get(AppConfig.WORKERS_ENV_VAR)
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigError([f"{AppConfig.WORKERS_ENV_VAR}: expected an integer, got {env!r}"]) from exc
        return self.workers

    def decorrelation_config(self) -> DecorrelationConfig:
        return DecorrelationConfig(kind=self.loss.decorrelation_kind, lambda_d=self.loss.lambda_d,
                                   gamma_hinge=self.loss.gamma_hinge, std_floor=self.loss.std_floor)

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(decorrelation=self.decorrelation_config(), ct_weight=self.loss.ct_weight,
                               kappa=self.matcher.kappa,
                               stop_prototype_gradient=self.loss.stop_prototype_gradient)

    def matcher_config(self) -> MatcherConfig:
        m = self.matcher
        return MatcherConfig(kind=m.kind, beta=m.beta, epsilon=m.epsilon, max_iters=m.max_iters,
                             tol=m.tol, kappa=m.kappa, gamma_blend=m.gamma_blend)

    def adam_config(self) -> AdamConfig:
        t = self.training
        return AdamConfig(learning_rate=t.learning_rate, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
