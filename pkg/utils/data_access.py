import json
from pathlib import Path
from typing import Any

import pandas as pd
import yaml


class DataAccess:
    """Handles the output directory and result file I/O.

    Every CSV starts with the resolved run config as '#'-prefixed YAML lines,
    so a result file alone is enough to reproduce it.
    """

    def __init__(self, out_dir: str | Path = "results"):
        self.out_dir = Path(out_dir)

    def _make_path(self, filename: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / filename

    @staticmethod
    def config_header(config: dict | None) -> str:
        if not config:
            return ""
        dumped = yaml.safe_dump(config, sort_keys=True, default_flow_style=False)
        return "".join(f"# {line}\n" for line in dumped.splitlines())

    def save_csv(self, filename: str, frame: pd.DataFrame, config: dict | None = None) -> str:
        path = self._make_path(filename)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.config_header(config))
            frame.to_csv(fh, index=False, lineterminator="\n")
        return str(path)

    def save_json(self, filename: str, data: Any) -> str:
        path = self._make_path(filename)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, ensure_ascii=False, indent=2, sort_keys=True)
        return str(path)

    @staticmethod
    def load_yaml(path: str | Path) -> dict:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        return data or {}
