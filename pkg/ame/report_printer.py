from typing import Iterable

import pandas as pd
from loguru import logger

from report.charts import figure_payload
from utils.data_access import DataAccess


class ReportPrinter:
    """Handles formatted console output and the CSV / plot-data exports."""

    def __init__(self, config: dict, out_dir: str = "results", fmt: str = "csv", trace: bool = False):
        self.config = config or {}
        self.data_access = DataAccess(out_dir)
        self.fmt = fmt
        self.trace = trace
        self.written: list[str] = []

    def export_table(self, name: str, rows: pd.DataFrame | Iterable[dict], columns=None) -> str:
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
        path = self.data_access.save_csv(f"{name}.{self.fmt}", frame, self.config)
        self.written.append(path)
        if self.trace:
            logger.info("wrote {} rows to {}", len(frame), path)
        return path

    def export_figure(self, name: str, fig) -> str:
        payload = {"config": self.config, "figure": figure_payload(fig)}
        path = self.data_access.save_json(f"{name}.plot.json", payload)
        self.written.append(path)
        if self.trace:
            logger.info("wrote plot data to {}", path)
        return path

    def print_seeds(self):
        seeds = self.config.get("seeds", {})
        print(f"seeds: env={seeds.get('env')} attack={seeds.get('attack')} ensemble={seeds.get('ensemble')}")

    def print_summary(self, title: str, values: dict):
        print(f"\n===== {title} =====")
        for key, value in values.items():
            print(f"  {key}: {value}")

    def print_table(self, title: str, rows: pd.DataFrame | Iterable[dict]):
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
        print(f"\n{title}:")
        if frame.empty:
            print("  (none)")
            return
        print(frame.to_string(index=False))

    def print_written(self):
        if self.written:
            print("\nOutputs:")
            for path in self.written:
                print(f"  {path}")
