import io
from pathlib import Path

import pandas as pd
import yaml

"""
data_loader.py

Responsible for:
- Loading result CSVs written by the experiment runner.
- Recovering the resolved config echoed in their '#' header.
"""


def split_header(text: str) -> tuple[str, str]:
    header, body = [], []
    lines = text.splitlines(keepends=True)
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body = lines[i:]
            break
        header.append(line[2:] if line.startswith("# ") else line[1:])
    return "".join(header), "".join(body)


def load_results(path, results_dir: str | None = None) -> tuple[pd.DataFrame, dict]:
    """(table, resolved config) of one result CSV."""
    result_file = Path(results_dir) / path if results_dir else Path(path)
    if not result_file.exists():
        raise FileNotFoundError(f"Result file not found: {result_file}")

    header, body = split_header(result_file.read_text(encoding="utf-8"))
    config = yaml.safe_load(header) if header.strip() else {}
    if not body.strip():
        return pd.DataFrame(), config or {}
    return pd.read_csv(io.StringIO(body)), config or {}
