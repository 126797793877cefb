"""
Result files: strict JSON, CSV tables, console summaries and the output-dir lock.

Every experiment writes into one output directory with fixed file names
(``config.json``, ``metrics.json``, ``plan.csv``, ``executed.csv``,
``train_log.csv``, ``sweep.csv``, ``diagnostics.json``); see
docs/metrics_schema.md for the columns. JSON is written via a temp sibling and
``os.replace`` so a reader never sees a half-written file.
"""

import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import pandas as pd
from filelock import FileLock, Timeout
from tabulate import tabulate

from .errors import ConfigError, FormatError

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.json"
PLAN_FILE = "plan.csv"
EXECUTED_FILE = "executed.csv"
TRAIN_LOG_FILE = "train_log.csv"
SWEEP_FILE = "sweep.csv"
HISTORY_FILE = "history.csv"
MPC_LOG_FILE = "mpc_log.csv"
VALIDATION_FILE = "score_validation.csv"
DIAGNOSTICS_FILE = "diagnostics.json"
LOCK_FILE = ".sgp.lock"


def sanitize_for_json(obj: Any) -> Any:
    """
    Recursively convert numpy scalars/arrays to Python values and replace
    NaN/Infinity with None so the result is valid strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): sanitize_for_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize_for_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize_for_json(obj.tolist())
    if isinstance(obj, np.generic):
        return sanitize_for_json(obj.item())
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json_atomic(path: str | os.PathLike, payload: Any) -> None:
    path = str(path)
    tmp_path = path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump(sanitize_for_json(payload), f, indent=2, allow_nan=False)
    os.replace(tmp_path, path)


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"Malformed JSON in {path}: {e.msg}", offset=e.pos) from e


def train_log_file(model: str) -> str:
    """Per-model training log name, e.g. ``score_train_log.csv``."""
    return f"{model}_{TRAIN_LOG_FILE}"


def update_metrics(output_dir: str | os.PathLike, key: str, metrics: dict) -> dict:
    """Merge one command's metrics into ``metrics.json`` under ``key``; returns the whole file."""
    path = Path(output_dir) / METRICS_FILE
    payload = read_json(path) if path.exists() else {}
    payload[key] = metrics
    write_json_atomic(path, payload)
    return payload


def write_csv(path: str | os.PathLike, df: pd.DataFrame) -> None:
    tmp_path = str(path) + ".tmp"
    df.to_csv(tmp_path, index=False)
    os.replace(tmp_path, path)


def load_csv(csv_path: str | os.PathLike) -> pd.DataFrame:
    """
    Read a ``.csv`` or ``.csv.gz`` result table.

    Raises:
        FileNotFoundError: the file does not exist
        ValueError: the extension is neither .csv nor .csv.gz
        FormatError: pandas could not parse the file
    """
    file_path = Path(csv_path)
    if not file_path.exists():
        raise FileNotFoundError(f"File not found: {csv_path}")

    if str(file_path).endswith(".csv.gz"):
        compression = "gzip"
    elif file_path.suffix == ".csv":
        compression = None
    else:
        raise ConfigError(
            f"Unsupported file format. Expected .csv or .csv.gz, got: {file_path.suffix}"
        )

    try:
        return pd.read_csv(file_path, compression=compression)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"Could not parse CSV {csv_path}: {e}") from e


def trajectory_frame(x_seq: np.ndarray, u_seq: np.ndarray) -> pd.DataFrame:
    """Rows t=0..T with state columns x0.. and action columns u0.. (blank at t=T)."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    u_seq = np.asarray(u_seq, dtype=np.float64)
    rows = x_seq.shape[0]
    df = pd.DataFrame({"t": np.arange(rows)})
    for i in range(x_seq.shape[1]):
        df[f"x{i}"] = x_seq[:, i]
    padded = np.full((rows, u_seq.shape[1]), np.nan)
    padded[: u_seq.shape[0]] = u_seq
    for j in range(u_seq.shape[1]):
        df[f"u{j}"] = padded[:, j]
    return df


def format_metrics_table(metrics: dict, title: str | None = None) -> str:
    rows = []
    for key, value in metrics.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        elif isinstance(value, (dict, list)):
            continue
        rows.append([key, value])
    table = tabulate(rows, headers=["Metric", "Value"], tablefmt="simple")
    return f"{title}\n{table}" if title else table


def format_frame(df: pd.DataFrame, floatfmt: str = ".4g") -> str:
    return tabulate(df, headers="keys", tablefmt="simple", showindex=False, floatfmt=floatfmt)


@contextmanager
def output_dir_lock(output_dir: str | os.PathLike, timeout: float = 10) -> Iterator[Path]:
    """
    Hold an exclusive lock on ``output_dir`` while a run writes into it.

    Raises:
        ConfigError: another run holds the lock past ``timeout`` seconds.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / LOCK_FILE), timeout=timeout)
    try:
        with lock:
            yield out
    except Timeout:
        raise ConfigError(f"Output directory {out} is in use by another run") from None
