"""
Logging Utility Module

Structured logging for fits and pipeline runs. The file handler writes one
JSON object per line so fit traces can be loaded back with pandas; the
console handler writes short colored lines to stderr, leaving stdout to the
configuration banner and report text. Loggers obtained through
get_contextual_logger stamp every record with the clip they work on.
"""

import json
import logging
import logging.handlers
import math
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np

LOG_FILE = "physid.log"
ROTATE_BYTES = 10 * 1024 * 1024
ROTATE_BACKUPS = 5


def _plain(value: Any) -> Any:
    """Convert numpy values and non-finite floats into JSON-safe values."""
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def _short(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.4g}"
    return str(value)


class JSONFormatter(logging.Formatter):
    """
    One JSON object per record.

    Context fields from get_contextual_logger and log_with_data are merged
    into the object at top level. NaN becomes null and infinities become
    the strings "inf" / "-inf", so every line stays strict JSON.
    """

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'line': record.lineno,
        }
        for key, value in getattr(record, 'extra_fields', {}).items():
            entry[key] = _plain(value)
        if record.exc_info:
            entry['exception'] = self.formatException(record.exc_info)
        return json.dumps(entry, allow_nan=False)


class ConsoleFormatter(logging.Formatter):
    """Level, time, logger and message, then context as key=value pairs."""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
    }
    RESET = '\033[0m'

    def __init__(self, color: bool = True):
        super().__init__()
        self.color = color

    def format(self, record: logging.LogRecord) -> str:
        level = record.levelname
        if self.color:
            level = f"{self.COLORS.get(level, '')}{level}{self.RESET}"
        stamp = datetime.fromtimestamp(record.created).strftime('%H:%M:%S')
        parts = [level, f"[{stamp}]", f"{record.name}:", record.getMessage()]

        fields = getattr(record, 'extra_fields', None)
        if fields:
            shown = {k: v for k, v in fields.items() if not (isinstance(v, str) and not v)}
            parts.append(" ".join(f"{k}={_short(v)}" for k, v in shown.items()))

        line = " ".join(parts)
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        return line


def setup_logging(
    log_level: str = "INFO",
    log_dir: Optional[str] = None,
    console: bool = True,
) -> logging.Logger:
    """
    Configure the root logger for a physid run.

    Args:
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        log_dir: Directory for physid.log (default: LOG_DIR or ./logs)
        console: Also log to stderr

    Returns:
        The root logger
    """
    root = logging.getLogger()
    level = getattr(logging, log_level.upper(), logging.INFO)
    root.setLevel(level)
    root.handlers.clear()

    directory = Path(log_dir or os.getenv('LOG_DIR', 'logs'))
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / LOG_FILE

    file_handler = logging.handlers.RotatingFileHandler(
        path, maxBytes=ROTATE_BYTES, backupCount=ROTATE_BACKUPS, encoding='utf-8',
    )
    file_handler.setFormatter(JSONFormatter())
    root.addHandler(file_handler)

    if console:
        stream = logging.StreamHandler(sys.stderr)
        stream.setFormatter(ConsoleFormatter(color=sys.stderr.isatty()))
        root.addHandler(stream)

    # numpy RuntimeWarnings (overflow in a diverging rollout) land in the log
    logging.captureWarnings(True)

    root.debug(f"Logging to {path} at {log_level.upper()}")
    return root


def setup_from_config(log_level: Optional[str] = None) -> logging.Logger:
    """Configure logging from settings; log_level overrides LOG_LEVEL."""
    from config.settings import settings

    return setup_logging(log_level=log_level or settings.log_level, log_dir=settings.log_dir)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


class ClipLoggerAdapter(logging.LoggerAdapter):
    """
    Adapter that stamps fixed context (clip id, family) on every record.

    Fields passed per call through extra={'extra_fields': ...} win over the
    fixed ones.
    """

    def process(self, msg: str, kwargs: Dict[str, Any]):
        extra = kwargs.setdefault('extra', {})
        fields = dict(self.extra or {})
        fields.update(extra.get('extra_fields', {}))
        extra['extra_fields'] = fields
        return msg, kwargs


def get_contextual_logger(name: str, **context: Any) -> ClipLoggerAdapter:
    """
    Logger whose records carry the given context.

    Example:
        log = get_contextual_logger(__name__, clip="pendulum/pend_45#3@42")
        log.warning("Rollout diverged")
    """
    return ClipLoggerAdapter(logging.getLogger(name), context)


def log_with_data(logger: logging.Logger, level: str, message: str, **data: Any) -> None:
    """
    Log a message with structured fields.

    Example:
        log_with_data(logger, 'info', 'Epoch finished', epoch=200, loss=1.2e-6)
    """
    getattr(logger, level.lower())(message, extra={'extra_fields': data})


def log_banner(logger: logging.Logger, title: str, values: Mapping[str, Any]) -> None:
    """Log the resolved run configuration, one key per line."""
    rule = "=" * 60
    logger.info(rule)
    logger.info(title)
    for key in sorted(values):
        logger.info(f"  {key}: {values[key]}")
    logger.info(rule)
