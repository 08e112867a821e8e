import tempfile
import unittest
from pathlib import Path

import pandas as pd

from src.config.config import AppConfig
from src.storage.artifacts import RunManifest, read_table, write_table
from src.storage.plots import plot_loss_curve, plot_sweep


class TestTables(unittest.TestCase):

    def test_hash_line_and_round_trip(self):
        frame = pd.DataFrame({"split": ["sys", "noc"], "accuracy": [0.5, 0.25]})
        with tempfile.TemporaryDirectory() as tmp:
            path = write_table(Path(tmp) / "metrics.csv", frame, "abc123")
            raw = path.read_bytes()
            digest, loaded = read_table(path)
        self.assertTrue(raw.startswith(b"# config_hash=abc123\nsplit,accuracy\n"))
        self.assertNotIn(b"\r", raw)
        self.assertEqual(digest, "abc123")
        pd.testing.assert_frame_equal(loaded, frame)

    def test_missing_hash_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "plain.csv"
            path.write_text("a,b\n1,2\n", encoding="utf-8")
            with self.assertRaises(ValueError):
                read_table(path)


class TestRunManifest(unittest.TestCase):

    def test_write_and_read(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = RunManifest(config_hash="abc", command="eval")
            table = write_table(Path(tmp) / "t.csv", pd.DataFrame({"x": [1]}), "abc")
            manifest.add_file("t", table)
            with manifest.timed("eval"):
                pass
            path = manifest.write(tmp)
            restored = RunManifest.read(path)
        self.assertEqual(restored.files, {"t": str(table)})
        self.assertEqual(restored.code_version, AppConfig.CODE_VERSION)
        self.assertIn("eval", restored.timings)

    def test_missing_files(self):
        manifest = RunManifest(config_hash="abc", command="train")
        manifest.add_file("model", "/nonexistent/model.bin")
        self.assertEqual(manifest.missing_files(), ["model"])


class TestPlots(unittest.TestCase):

    def test_plots_are_written(self):
        curve = pd.DataFrame({"session": [0, 0, 1], "step": [0, 1, 0], "total": [1.0, 0.8, 0.9],
                              "ce": [0.9, 0.7, 0.8]})
        sweep = pd.DataFrame({"parameter": ["gamma_blend"] * 4, "value": [0.0, 0.0, 1.0, 1.0],
                              "split": ["sys", "noc"] * 2, "accuracy": [0.5, 0.3, 0.6, 0.2],
                              "ci95": [0.01] * 4, "episodes": [3] * 4})
        with tempfile.TemporaryDirectory() as tmp:
            loss_path = plot_loss_curve(curve, Path(tmp) / "loss.png")
            sweep_path = plot_sweep(sweep, "gamma_blend", Path(tmp) / "sweep.png")
            self.assertTrue(loss_path.is_file())
            self.assertTrue(sweep_path.is_file())


if __name__ == '__main__':
    unittest.main()
