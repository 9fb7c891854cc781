"""Logging configuration.

Goals:
- Structured JSON logs by default (easy to grep / ship from batch runs)
- Automatically include the run id (plan hash) of the current experiment run
- Plain `logging` handlers; nothing to install

Experiment code attaches structured context through ``extra=``, e.g.::

    logger.info("combination finished", extra={"scheme": "lumped", "example": "c", "h": 1 / 64})
"""

from __future__ import annotations

import json
import logging
from contextvars import ContextVar
from datetime import datetime, timezone
from typing import Any, Dict, Optional


# Set by jobs.run_plan for the duration of a run.
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)

_STRUCTURED_FIELDS = (
    "run_id",
    "plan",
    "table",
    "scheme",
    "example",
    "alpha",
    "t",
    "h",
    "tau",
    "regime",
    "n_modes",
    "duration_s",
)


class _ContextFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:  # noqa: A003
        rid = run_id_var.get()
        if rid and getattr(record, "run_id", None) is None:
            setattr(record, "run_id", rid)
        return True


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:  # noqa: A003
        payload: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "severity": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        for key in _STRUCTURED_FIELDS:
            v = getattr(record, key, None)
            if v is not None:
                payload[key] = v

        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)

        return json.dumps(payload, default=str)


def setup_logging(*, log_level: str = "INFO", log_format: str = "json") -> None:
    """Configure root logging.

    Idempotent: safe to call multiple times.
    """

    level = getattr(logging, (log_level or "INFO").upper(), logging.INFO)

    root = logging.getLogger()
    root.setLevel(level)

    for h in list(root.handlers):
        root.removeHandler(h)

    handler = logging.StreamHandler()
    if (log_format or "json").lower() == "json":
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))

    handler.addFilter(_ContextFilter())
    root.addHandler(handler)
