"""
Run Logger - Training Log & System Logger
==========================================
Append-only tab-delimited training log + Python logging for system events.

Components:
  1. TrainingLog        - append-only TSV per-epoch log (<run>/training_log.tsv)
  2. get_system_logger  - file (logs/system.log) + console logger

Usage:
    from run_logger import TrainingLog, get_system_logger

    tlog = TrainingLog("runs/toy/training_log.tsv")
    tlog.log_epoch(stage="1-GEN", epoch=0, iterations=100, loss=0.41, ...)

Change log:
  2026-10-18  Initial implementation
"""

import logging
import os
from datetime import datetime
from typing import Dict, Optional

import pandas as pd

from ddf_config import LOG_DIR, SYSTEM_LOG_FILE


TRAINING_LOG_COLUMNS = (
    "stage", "epoch", "iterations", "loss", "cls_loss", "reg_loss",
    "learning_rates", "config_digest", "logged_at",
)


# ============================================================
# TRAINING LOG - append-only delimited text
# ============================================================

class TrainingLog:
    """Append-only training log, one tab-delimited line per epoch.

    The header is written once when the file is created; later runs append
    below it so a whole stage sequence lives in one file.
    """

    def __init__(self, log_file: str):
        self.log_file = log_file
        parent = os.path.dirname(log_file)
        if parent:
            os.makedirs(parent, exist_ok=True)
        if not os.path.exists(log_file):
            with open(log_file, "w", encoding="utf-8") as f:
                f.write("\t".join(TRAINING_LOG_COLUMNS) + "\n")

    def _append(self, record: Dict):
        record["logged_at"] = datetime.now().isoformat(timespec="seconds")
        row = []
        for col in TRAINING_LOG_COLUMNS:
            value = record.get(col, "")
            if isinstance(value, float):
                value = f"{value:.8g}"
            row.append(str(value).replace("\t", " "))
        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write("\t".join(row) + "\n")

    def log_epoch(self, stage: str, epoch: int, iterations: int, loss: float,
                  cls_loss: float, reg_loss: float,
                  learning_rates: Optional[Dict[str, float]] = None,
                  config_digest: str = ""):
        """Log the mean losses of one finished epoch."""
        rates = ",".join(f"{k}={v:.3g}" for k, v in sorted((learning_rates or {}).items()))
        self._append({
            "stage": stage,
            "epoch": epoch,
            "iterations": iterations,
            "loss": float(loss),
            "cls_loss": float(cls_loss),
            "reg_loss": float(reg_loss),
            "learning_rates": rates,
            "config_digest": config_digest,
        })

    def read(self) -> pd.DataFrame:
        """Read the whole log as a DataFrame (empty frame if missing)."""
        if not os.path.exists(self.log_file):
            return pd.DataFrame(columns=list(TRAINING_LOG_COLUMNS))
        return pd.read_csv(self.log_file, sep="\t")


# ============================================================
# SYSTEM LOGGER - Python logging for system events
# ============================================================

def get_system_logger(name: str = "ddfnet", log_file: str = SYSTEM_LOG_FILE) -> logging.Logger:
    """Get or create a configured system logger.

    Logs to both file (logs/system.log) and console.
    """
    logger = logging.getLogger(name)

    # Avoid adding duplicate handlers
    if logger.handlers:
        return logger

    logger.setLevel(logging.INFO)
    os.makedirs(os.path.dirname(log_file) or LOG_DIR, exist_ok=True)

    fh = logging.FileHandler(log_file, encoding="utf-8")
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(logging.Formatter(
        "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    ))
    logger.addHandler(fh)

    # Console handler - warnings and above
    ch = logging.StreamHandler()
    ch.setLevel(logging.WARNING)
    ch.setFormatter(logging.Formatter("  [%(levelname)s] %(message)s"))
    logger.addHandler(ch)

    return logger
