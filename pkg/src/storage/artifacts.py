"""CSV tables tagged with the config hash, and the per-run JSON manifest."""
from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd

from src.config.config import AppConfig

HASH_PREFIX = "# config_hash="


def write_table(path: str | Path, frame: pd.DataFrame, config_hash: str) -> Path:
    """UTF-8, LF-terminated CSV whose first line records the config hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(handle, index=False, lineterminator="\n")
    return path


def read_table(path: str | Path) -> tuple[str, pd.DataFrame]:
    """Returns (config hash, table) of a file written by :func:`write_table`."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
        if not first.startswith(HASH_PREFIX):
            raise ValueError(f"{path} does not start with a config hash line")
        return first[len(HASH_PREFIX):], pd.read_csv(handle)


@dataclass
class RunManifest:
    config_hash: str
    command: str
    code_version: str = AppConfig.CODE_VERSION
    files: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def add_file(self, name: str, path: str | Path) -> None:
        self.files[name] = str(path)

    @contextmanager
    def timed(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - start, 3)

    def missing_files(self) -> list[str]:
        return [name for name, path in self.files.items() if not Path(path).is_file()]

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
