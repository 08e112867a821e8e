"""Command-line surface: train, eval, gradlab, sweep and purity.

Exit codes: 0 success, 1 failed check, 2 usage, configuration or shape error,
3 numerical failure (including degenerate vectors and emptied slot sets).
"""
import argparse
import logging
import sys

from src.config.config import AppConfig
from src.config.experiment_config import ExperimentConfig
from src.core.errors import (CheckFailure, ComposeLabError, ConfigError, DegenerateVector, EmptyAfterCentering,
                             ModelFormatError, NonFiniteError, NumericalFailure, ShapeError)
from src.core.experiment_controller import SWEEP_PARAMETERS, ExperimentController

logger = logging.getLogger("compose_lab")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--out", help="output directory, overrides output.dir")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--workers", type=int,
                        help=f"evaluation workers (else ${AppConfig.WORKERS_ENV_VAR}, else the config)")
    common.add_argument("--episodes", type=int, help="overrides evaluation.episodes")

    parser = argparse.ArgumentParser(prog="compose-lab", description="Compositional slot-encoder workbench.")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="continual training, writes model.bin")
    evaluate = commands.add_parser("eval", parents=[common], help="per-split accuracy of a trained model")
    evaluate.add_argument("--model", help="model file (default <out>/model.bin)")
    commands.add_parser("gradlab", parents=[common], help="numerical gradient and feasibility checks")
    sweep = commands.add_parser("sweep", parents=[common], help="evaluate across values of one parameter")
    sweep.add_argument("--parameter", required=True, choices=sorted(SWEEP_PARAMETERS))
    sweep.add_argument("--values", required=True, nargs="+", help="values, parsed as YAML scalars")
    sweep.add_argument("--model", help="trained model shared by inference-only sweeps")
    purity = commands.add_parser("purity", parents=[common], help="slot purity of the frozen extractor")
    purity.add_argument("--images", type=int, help="number of rendered scenes")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = config.with_override("seed", args.seed)
    if args.out:
        config = config.with_override("output.dir", args.out)
    if args.episodes is not None:
        config = config.with_override("evaluation.episodes", args.episodes)
    return config


def run(args: argparse.Namespace, config: ExperimentConfig) -> None:
    controller = ExperimentController(config, args.workers)
    controller.register_callbacks(
        on_status_message=logger.info,
        on_check_result=lambda r: logger.log(logging.INFO if r.passed else logging.ERROR,
                                             "%s/%s: %s (value %.3e, threshold %.3e)", r.check, r.invariant,
                                             "pass" if r.passed else "FAIL", r.value, r.threshold),
    )
    if args.command == "train":
        controller.train()
    elif args.command == "eval":
        controller.evaluate(args.model)
    elif args.command == "gradlab":
        controller.gradlab()
    elif args.command == "sweep":
        controller.sweep(args.parameter, args.values, args.model)
    elif args.command == "purity":
        controller.purity(args.images)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return AppConfig.EXIT_OK if exc.code == 0 else AppConfig.EXIT_USAGE

    logging.basicConfig(level=AppConfig.LOG_LEVEL, format=AppConfig.LOG_FORMAT)
    try:
        config = load_config(args)
        logging.getLogger().setLevel(config.output.log_level.upper())
        run(args, config)
    except ConfigError as exc:
        for problem in exc.problems:
            logger.error("config: %s", problem)
        return AppConfig.EXIT_USAGE
    except (FileNotFoundError, ModelFormatError, ShapeError) as exc:
        logger.error("%s", exc)
        return AppConfig.EXIT_USAGE
    except CheckFailure as exc:
        logger.error("%s", exc)
        return AppConfig.EXIT_CHECK_FAILURE
    except (NumericalFailure, NonFiniteError, DegenerateVector, EmptyAfterCentering) as exc:
        logger.error("numerical failure: %s", exc)
        return AppConfig.EXIT_NUMERIC
    except ComposeLabError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return AppConfig.EXIT_USAGE
    return AppConfig.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
