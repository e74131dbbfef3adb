# tdnas/log.py
from __future__ import annotations

import logging
import sys
from pathlib import Path

from .config import LOG_FILE, LOG_LEVEL


def configure_logging(level: str | None = None, log_file: str | Path | None = None) -> None:
    """
    Route package log records to stderr and, optionally, to a run log file.
    Artifacts never carry timestamps; only the run log file does.
    """
    level = (level or LOG_LEVEL).upper()
    if log_file is None:
        log_file = LOG_FILE

    root = logging.getLogger("tdnas")
    root.setLevel(level)
    root.handlers.clear()

    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(stream)

    if log_file:
        path = Path(log_file)
        path.parent.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(path, encoding="utf-8")
        handler.setFormatter(
            logging.Formatter("%(asctime)s | %(levelname)s %(name)s: %(message)s")
        )
        root.addHandler(handler)
