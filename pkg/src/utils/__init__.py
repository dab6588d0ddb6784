"""Logging helpers shared by every physid module"""

from .logging import (
    ClipLoggerAdapter,
    ConsoleFormatter,
    JSONFormatter,
    get_contextual_logger,
    get_logger,
    log_banner,
    log_with_data,
    setup_from_config,
    setup_logging,
)

__all__ = [
    'ClipLoggerAdapter',
    'ConsoleFormatter',
    'JSONFormatter',
    'get_contextual_logger',
    'get_logger',
    'log_banner',
    'log_with_data',
    'setup_from_config',
    'setup_logging',
]
