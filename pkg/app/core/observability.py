import logging
import sys
from typing import Any, Dict, Optional

import structlog

LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def configure_logging(level: str = "warning") -> None:
    """Configure structlog to emit JSON lines on stderr at the given level."""
    try:
        threshold = LEVELS[level.lower()]
    except KeyError:
        raise ValueError(f"Unknown log level {level!r} (choose from {', '.join(LEVELS)})") from None

    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.JSONRenderer(sort_keys=True),
        ],
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        wrapper_class=structlog.make_filtering_bound_logger(threshold),
        cache_logger_on_first_use=False,
    )


def get_logger(name: str) -> structlog.BoundLogger:
    """Get a logger instance with the given name."""
    return structlog.get_logger(name, logger_name=name)


def log_error(logger: structlog.BoundLogger, error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
    """Log an error with context."""
    logger.error(
        "error",
        error=str(error),
        error_type=type(error).__name__,
        context=context or {},
    )


configure_logging()
