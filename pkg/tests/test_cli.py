import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import yaml

from src.config.config import AppConfig
from src.core.cli import build_parser, main
from src.core.errors import (ComposeLabError, DegenerateVector, EmptyAfterCentering, NonFiniteError, NumericalFailure,
                             ShapeError)

SMOKE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "smoke.yaml"


class TestCli(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, **sections) -> str:
        data = yaml.safe_load(SMOKE_CONFIG.read_text(encoding="utf-8"))
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        path = self.out / "config.yaml"
        path.write_text(yaml.safe_dump(data), encoding="utf-8")
        return str(path)

    def test_parser_overrides(self):
        args = build_parser().parse_args(["sweep", "--parameter", "beta", "--values", "1", "5", "--seed", "3"])
        self.assertEqual(args.values, ["1", "5"])
        self.assertEqual(args.seed, 3)

    def test_train_then_eval(self):
        common = ["--config", str(SMOKE_CONFIG), "--out", str(self.out / "run")]
        self.assertEqual(main(["train"] + common), AppConfig.EXIT_OK)
        self.assertEqual(main(["eval"] + common + ["--episodes", "2"]), AppConfig.EXIT_OK)
        self.assertTrue((self.out / "run" / "metrics.csv").is_file())

    def test_usage_errors(self):
        self.assertEqual(main([]), AppConfig.EXIT_USAGE)
        self.assertEqual(main(["fly"]), AppConfig.EXIT_USAGE)
        self.assertEqual(main(["sweep", "--parameter", "colour", "--values", "1"]), AppConfig.EXIT_USAGE)

    def test_bad_config_exits_two(self):
        bad = self.out / "bad.yaml"
        bad.write_text("model:\n  dim: eight\n", encoding="utf-8")
        self.assertEqual(main(["train", "--config", str(bad)]), AppConfig.EXIT_USAGE)
        self.assertEqual(main(["train", "--config", str(self.out / "missing.yaml")]), AppConfig.EXIT_USAGE)

    def test_missing_model_exits_two(self):
        code = main(["eval", "--config", str(SMOKE_CONFIG), "--model", str(self.out / "none.bin")])
        self.assertEqual(code, AppConfig.EXIT_USAGE)

    def test_failed_check_exits_one(self):
        config = self.write_config(gradlab={"checks": ["oracle"], "corrupt_gradient": True})
        code = main(["gradlab", "--config", config, "--out", str(self.out / "lab")])
        self.assertEqual(code, AppConfig.EXIT_CHECK_FAILURE)

    def test_numerical_failure_exits_three(self):
        with patch("src.core.cli.ExperimentController.train", side_effect=NumericalFailure("loss is nan")):
            code = main(["train", "--config", str(SMOKE_CONFIG), "--out", str(self.out / "run")])
        self.assertEqual(code, AppConfig.EXIT_NUMERIC)

    def test_library_errors_map_to_exit_codes(self):
        cases = [
            (DegenerateVector("prototype vanished", index=2), AppConfig.EXIT_NUMERIC),
            (EmptyAfterCentering("all top-3 slots vanished"), AppConfig.EXIT_NUMERIC),
            (NonFiniteError("gradient is nan", coordinate=0), AppConfig.EXIT_NUMERIC),
            (ShapeError("slot sets live in different dimensions"), AppConfig.EXIT_USAGE),
            (ComposeLabError("unclassified failure"), AppConfig.EXIT_USAGE),
        ]
        for error, expected in cases:
            with self.subTest(error=type(error).__name__):
                with patch("src.core.cli.ExperimentController.train", side_effect=error):
                    code = main(["train", "--config", str(SMOKE_CONFIG), "--out", str(self.out / "run")])
                self.assertEqual(code, expected)


if __name__ == '__main__':
    unittest.main()
