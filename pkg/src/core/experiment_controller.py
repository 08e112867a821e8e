import dataclasses
import logging
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
import yaml

from src.analysis.checks import CHECKS, CheckResult
from src.bench.continual import SessionLog, build_benchmark, run_continual_training
from src.bench.episodes import sample_episode
from src.bench.metrics import MetricsTable, episode_off_diag, evaluate_split, forgetting_factor
from src.bench.splits import SplitPart, SplitSpec
from src.config.experiment_config import GRADLAB_CHECKS, ExperimentConfig
from src.core.errors import CheckFailure, ConfigError
from src.encoder.model import EncoderParams
from src.numerics.tensor_core import RngState
from src.storage.artifacts import RunManifest, read_table, write_table
from src.storage.model_store import load_model, save_model
from src.storage.plots import plot_loss_curve, plot_sweep
from src.vision.purity import dominant_categories, slot_purity

logger = logging.getLogger(__name__)

MODEL_FILE = "model.bin"
LOSS_COLUMNS = ["session", "step", "ce", "decorrelation", "ct", "total"]
EPISODE_COLUMNS = ["split", "episode", "n_correct", "n_query", "accuracy"]
OFF_DIAG_EPISODES = 20

# sweep parameter -> (dotted config key, needs retraining)
SWEEP_PARAMETERS = {
    "lambda_d": ("loss.lambda_d", True),
    "gamma_blend": ("matcher.gamma_blend", False),
    "shots": ("evaluation.shot", False),
    "matcher_kind": ("matcher.kind", False),
    "beta": ("matcher.beta", False),
    "epsilon": ("matcher.epsilon", False),
}


class ExperimentController:
    """
    Runs the compose-lab commands and writes their artifacts under ``output.dir``.
    """
    def __init__(self, config: ExperimentConfig, workers: int | None = None):
        self.config = config
        self.workers = config.resolve_workers(workers)
        self.out_dir = Path(config.output.dir)

        # Callbacks for progress reporting
        self.on_status_message = None
        self.on_session_complete = None
        self.on_check_result = None

    def register_callbacks(self, on_status_message: Callable[[str], None] | None = None,
                           on_session_complete: Callable[[SessionLog], None] | None = None,
                           on_check_result: Callable[[CheckResult], None] | None = None):
        self.on_status_message = on_status_message
        self.on_session_complete = on_session_complete
        self.on_check_result = on_check_result

    def _status(self, message: str):
        if self.on_status_message:
            self.on_status_message(message)
        else:
            logger.info(message)

    def _write(self, manifest: RunManifest, name: str, frame: pd.DataFrame) -> Path:
        path = write_table(self.out_dir / f"{name}.csv", frame, manifest.config_hash)
        manifest.add_file(name, path)
        return path

    def _finish(self, manifest: RunManifest) -> RunManifest:
        missing = manifest.missing_files()
        if missing:
            raise CheckFailure("manifest", f"files not written: {missing}")
        path = manifest.write(self.out_dir)
        self._status(f"{manifest.command}: wrote {len(manifest.files)} files, manifest at {path}")
        return manifest

    def _train_params(self, config: ExperimentConfig):
        return run_continual_training(config, self.workers, on_status_message=self.on_status_message,
                                      on_session_complete=self.on_session_complete)

    def train(self) -> RunManifest:
        """Runs continual training and writes the model, loss curve and session log."""
        config = self.config
        manifest = RunManifest(config_hash=config.config_hash(), command="train")
        with manifest.timed("train"):
            result = self._train_params(config)

        manifest.add_file("model", save_model(self.out_dir / MODEL_FILE, result.params, config.model.num_slots))
        loss_curve = pd.DataFrame(result.loss_curve, columns=LOSS_COLUMNS)
        self._write(manifest, "loss_curve", loss_curve)
        self._write(manifest, "session_log", pd.DataFrame([dataclasses.asdict(s) for s in result.sessions]))
        if config.output.plots and len(loss_curve):
            manifest.add_file("loss_curve_plot", plot_loss_curve(loss_curve, self.out_dir / "loss_curve.png"))
        return self._finish(manifest)

    def _load_params(self, model_path: str | Path | None) -> tuple[EncoderParams, Path]:
        path = Path(model_path) if model_path else self.out_dir / MODEL_FILE
        params, num_slots = load_model(path)
        m = self.config.model
        if (params.dim, params.hidden_dim, num_slots) != (m.dim, m.hidden_dim, m.num_slots):
            raise ConfigError([f"model {path} has D={params.dim}, h={params.hidden_dim}, K={num_slots}; "
                               f"config expects D={m.dim}, h={m.hidden_dim}, K={m.num_slots}"])
        return params, path

    @staticmethod
    def _part(split: SplitSpec, name: str) -> SplitPart:
        try:
            return split.part(name)
        except KeyError as exc:
            raise ConfigError([f"evaluation.splits: '{name}' is not built; add it to benchmark.extra_parts"]) from exc

    def _evaluate(self, params: EncoderParams, config: ExperimentConfig) -> tuple[MetricsTable, pd.DataFrame]:
        root = RngState(config.seed)
        split, renderer = build_benchmark(config, root)
        ev = config.evaluation
        matcher = config.matcher_config()
        table = MetricsTable()
        records = []
        for name in ev.splits:
            result = evaluate_split(params, split, self._part(split, name), ev.episodes, matcher, renderer,
                                    root.spawn("eval"), ev.way, ev.shot, ev.queries, self.workers)
            table.add(result)
            n_query = result.queries_per_episode
            records += [{"split": name, "episode": i, "n_correct": int(round(a * n_query)), "n_query": n_query,
                         "accuracy": float(a)} for i, a in enumerate(result.per_episode)]

        part = self._part(split, ev.splits[0])
        way = min(ev.way, len(part.class_ids))
        sample = [sample_episode(split, part, way, ev.shot, ev.queries, renderer, root.spawn("off_diag", i))
                  for i in range(min(ev.episodes, OFF_DIAG_EPISODES))]
        table.off_diag = episode_off_diag(params, sample, config.loss.std_floor)
        return table, pd.DataFrame(records, columns=EPISODE_COLUMNS)

    def _forgetting(self, model_path: Path) -> float | None:
        session_log = model_path.parent / "session_log.csv"
        if not session_log.is_file():
            return None
        digest, frame = read_table(session_log)
        if digest != self.config.config_hash():
            logger.warning("session log %s was written under config %s", session_log, digest)
        if len(frame) < 2:
            return None
        return forgetting_factor(frame["base_accuracy"])

    def evaluate(self, model_path: str | Path | None = None) -> RunManifest:
        """Per-split accuracy ± CI, H_a, C_off and (after multi-session training) FF.

        Raises:
            FileNotFoundError: If the model file does not exist.
            ConfigError: If the model does not fit the configured dimensions.
        """
        params, path = self._load_params(model_path)
        manifest = RunManifest(config_hash=self.config.config_hash(), command="eval")
        with manifest.timed("eval"):
            table, episodes = self._evaluate(params, self.config)
        table.forgetting = self._forgetting(path)
        for row in table.rows:
            self._status(f"{row.split}: accuracy {row.accuracy:.4f} ± {row.ci:.4f}")
        self._write(manifest, "metrics", table.to_frame())
        self._write(manifest, "episodes", episodes)
        return self._finish(manifest)

    def gradlab(self) -> RunManifest:
        """Runs the configured numerical checks and writes one CSV per measured table.

        Raises:
            CheckFailure: After all files are written, naming every failed invariant.
        """
        config = self.config
        manifest = RunManifest(config_hash=config.config_hash(), command="gradlab")
        root = RngState(config.seed).spawn("gradlab")
        results: list[CheckResult] = []
        for name in (c for c in GRADLAB_CHECKS if c in config.gradlab.checks):
            self._status(f"gradlab: running {name}")
            with manifest.timed(name):
                report = CHECKS[name](config, root.spawn(name))
            for table_name, frame in report.tables.items():
                self._write(manifest, table_name, frame)
            for result in report.results:
                if self.on_check_result:
                    self.on_check_result(result)
            results += report.results
        self._write(manifest, "gradlab_summary", pd.DataFrame([r.as_row() for r in results],
                                                              columns=[f.name for f in dataclasses.fields(CheckResult)]))
        self._finish(manifest)
        failed = [r for r in results if not r.passed]
        if failed:
            raise CheckFailure(", ".join(r.invariant for r in failed),
                               "; ".join(f"{r.invariant}={r.value:.3e} (threshold {r.threshold:.3e})" for r in failed))
        return manifest

    @staticmethod
    def _parse_value(value: Any) -> Any:
        return yaml.safe_load(value) if isinstance(value, str) else value

    def sweep(self, parameter: str, values: list, model_path: str | Path | None = None) -> RunManifest:
        """One evaluation per value, merged into a long table.

        Values of ``lambda_d`` retrain the encoder; every other parameter only
        changes inference, so one trained model (``model_path`` or a fresh
        run) is shared across values.

        Raises:
            ConfigError: On an unknown parameter or an invalid value.
        """
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError([f"sweep parameter '{parameter}' is not one of {sorted(SWEEP_PARAMETERS)}"])
        if not values:
            raise ConfigError(["sweep needs at least one value"])
        key, retrain = SWEEP_PARAMETERS[parameter]
        parsed = [self._parse_value(v) for v in values]
        configs = [self.config.with_override(key, v) for v in parsed]

        manifest = RunManifest(config_hash=self.config.config_hash(), command=f"sweep {parameter}")
        shared = None
        if not retrain:
            shared = self._load_params(model_path)[0] if model_path else self._train_params(self.config).params
        rows = []
        for value, config in zip(parsed, configs):
            self._status(f"sweep {parameter}={value}")
            with manifest.timed(f"{parameter}={value}"):
                params = self._train_params(config).params if retrain else shared
                table, _ = self._evaluate(params, config)
            frame = table.to_frame()
            frame = frame[frame["split"] != "C_off"]
            for record in frame.to_dict("records"):
                rows.append({"parameter": parameter, "value": value, **record})
        sweep = pd.DataFrame(rows)
        self._write(manifest, "sweep", sweep)
        if self.config.output.plots:
            manifest.add_file("sweep_plot", plot_sweep(sweep[sweep["split"] != "H_a"], parameter,
                                                       self.out_dir / "sweep.png"))
        return self._finish(manifest)

    def purity(self, n_images: int | None = None) -> RunManifest:
        """Slot purity of the frozen extractor on rendered train, sys and noc scenes."""
        config = self.config
        root = RngState(config.seed)
        split, renderer = build_benchmark(config, root)
        class_ids = sorted(split.train_classes + split.sys_classes + split.noc_classes)
        n_images = n_images or config.evaluation.session_episodes
        manifest = RunManifest(config_hash=config.config_hash(), command="purity")
        rows, attn, labels = [], [], []
        with manifest.timed("purity"):
            for i in range(n_images):
                class_id = class_ids[i % len(class_ids)]
                image = renderer.render(split, class_id, root.spawn("purity", i))
                _, share = dominant_categories(image.attn, image.patch_labels)
                attn.append(image.attn)
                labels.append(image.patch_labels)
                rows.append({"image": i, "class_id": class_id,
                             "concepts": "-".join(str(c) for c in split.classes[class_id].concept_ids),
                             "purity": float(np.mean(share > 0.5)), "mean_dominant_share": float(share.mean())})
        self._status(f"slot purity over {n_images} images: {slot_purity(attn, labels):.4f}")
        self._write(manifest, "purity", pd.DataFrame(rows))
        return self._finish(manifest)
