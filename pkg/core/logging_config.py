"""Logging for the CLI, experiment runs and their worker processes."""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

from core.config import Config

# Format: timestamp | level | process | logger | message
FORMAT = "%(asctime)s | %(levelname)-8s | %(processName)-16s | %(name)-18s | %(message)s"
DATEFMT = "%Y-%m-%d %H:%M:%S"
QUIET_LIBS = ("asyncio", "concurrent.futures")


def resolve_level(log_level: Optional[str] = None) -> int:
    return getattr(logging, (log_level or Config.LOG_LEVEL).upper(), logging.INFO)


def _formatter() -> logging.Formatter:
    return logging.Formatter(FORMAT, datefmt=DATEFMT)


def _console(level: int) -> logging.Handler:
    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(_formatter())
    console.setLevel(level)
    return console


def setup_logging(log_level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """Console plus a rotating strata.log (5MB x 3) under `log_dir`."""
    level = resolve_level(log_level)
    log_dir = log_dir or Config.LOG_DIR

    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()
    root.addHandler(_console(level))

    try:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            os.path.join(log_dir, "strata.log"),
            maxBytes=5 * 1024 * 1024,
            backupCount=3,
            encoding="utf-8"
        )
        file_handler.setFormatter(_formatter())
        file_handler.setLevel(level)
        root.addHandler(file_handler)
    except (PermissionError, OSError):
        root.warning(f"File logging disabled: {log_dir} is not writable")

    for lib in QUIET_LIBS:
        logging.getLogger(lib).setLevel(logging.WARNING)
    return root


def add_run_log(run_dir: str) -> logging.Handler:
    """Mirror the root logger into <run_dir>/run.log; detach with remove_run_log."""
    os.makedirs(run_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(run_dir, "run.log"), mode="w", encoding="utf-8")
    handler.setFormatter(_formatter())
    handler.setLevel(logging.getLogger().getEffectiveLevel())
    logging.getLogger().addHandler(handler)
    return handler


def remove_run_log(handler: logging.Handler):
    logging.getLogger().removeHandler(handler)
    handler.close()


def init_worker(level: int):
    """ProcessPoolExecutor initializer: console only, at the parent's level."""
    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()
    root.addHandler(_console(level))
    for lib in QUIET_LIBS:
        logging.getLogger(lib).setLevel(logging.WARNING)
