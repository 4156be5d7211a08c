"""Logging setup and the line-delimited JSON training log.

Every module logs through ``logging.getLogger(__name__)``. The CLI calls
:func:`configure_logging` once per run to send records to stderr and to
``run.log`` inside the run directory.

The training loop writes one JSON object per optimizer step to
``train_log.jsonl`` through :class:`TrainingLog`; :func:`read_training_log`
reads it back.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: str = "info", log_file: str | Path | None = None) -> None:
    """Route ``edgeseg`` loggers to stderr and optionally to a file.

    Calling it again replaces the handlers installed by the previous call.

    :param level: Level name (debug, info, warning, error).
    :type level: str
    :param log_file: File receiving the same records, or None.
    :type log_file: str | Path | None
    """
    root = logging.getLogger("edgeseg")
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.setLevel(level.upper())
    root.propagate = False

    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler()
    stream.setFormatter(formatter)
    root.addHandler(stream)
    if log_file is not None:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class TrainingLog:
    """Append-only writer of per-step JSON records.

    The file is opened in append mode so a resumed run continues the same log.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, record: dict[str, Any]) -> None:
        """Write one record as a single JSON line and flush it."""
        self._fh.write(json.dumps({k: _jsonable(v) for k, v in record.items()}, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TrainingLog":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def read_training_log(path: str | Path) -> list[dict[str, Any]]:
    """Parse a ``train_log.jsonl`` file into a list of records (blank lines skipped)."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
