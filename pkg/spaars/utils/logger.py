"""Logging configuration and utilities."""
import logging
import sys
from pathlib import Path

from spaars.config import settings

# Create logs directory if it doesn't exist
log_dir = Path(settings.LOG_DIR)
log_dir.mkdir(parents=True, exist_ok=True)

# Configure logging format
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

level = getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)

logger = logging.getLogger("spaars")
logger.setLevel(level)
logger.propagate = False

# Remove any existing handlers
logger.handlers = []

# File handler - write to spaars.log
file_handler = logging.FileHandler(log_dir / "spaars.log", encoding="utf-8")
file_handler.setLevel(level)
file_handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))

# Console handler - stderr keeps stdout free for reports
console_handler = logging.StreamHandler(sys.stderr)
console_handler.setLevel(level)
console_handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))

logger.addHandler(file_handler)
logger.addHandler(console_handler)


def _with_context(message: str, kwargs: dict) -> str:
    if kwargs:
        return f"{message} | {kwargs}"
    return message


def log_info(message: str, **kwargs):
    """Log info message with optional context."""
    logger.info(_with_context(message, kwargs))


def log_warning(message: str, **kwargs):
    """Log warning message with optional context."""
    logger.warning(_with_context(message, kwargs))


def log_error(message: str, **kwargs):
    """Log error message with optional context."""
    logger.error(_with_context(message, kwargs))


def log_debug(message: str, **kwargs):
    """Log debug message with optional context."""
    logger.debug(_with_context(message, kwargs))
