"""Per-run logging: console on stderr, full detail in the run's log file.

Every record carries the run id of the run that emitted it.
numpy and scipy RuntimeWarnings raised during fits are routed into the log.
"""

import logging
import sys
from pathlib import Path
from typing import Optional

RUN_FORMAT = '%(asctime)s - [%(run_id)s] - %(name)s - %(levelname)s - %(message)s'
NO_RUN = "-"


class RunIdFilter(logging.Filter):
    """Stamps records with the id of the run that emitted them."""

    def __init__(self, run_id: Optional[str]):
        super().__init__()
        self.run_id = run_id or NO_RUN

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = self.run_id
        return True


def _reset(root: logging.Logger) -> None:
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()


def setup_logging(
    log_file: Optional[Path] = None,
    level: str = "INFO",
    run_id: Optional[str] = None
) -> logging.Logger:
    """Configure the root logger for one run.

    The console honours level; the log file always records DEBUG.
    """
    console_level = getattr(logging, level.upper())
    formatter = logging.Formatter(RUN_FORMAT)
    run_filter = RunIdFilter(run_id)

    root = logging.getLogger()
    _reset(root)
    root.setLevel(logging.DEBUG if log_file else console_level)

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(console_level)
    console.setFormatter(formatter)
    console.addFilter(run_filter)
    root.addHandler(console)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        run_log = logging.FileHandler(log_file, encoding='utf-8')
        run_log.setLevel(logging.DEBUG)
        run_log.setFormatter(formatter)
        run_log.addFilter(run_filter)
        root.addHandler(run_log)
        root.debug(f"Run log: {log_file}")

    logging.captureWarnings(True)
    return root


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
