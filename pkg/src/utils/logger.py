"""
Logging for StableDS.

Library modules share one named logger obtained through get_logger(). It
writes to stderr only, so command summaries on stdout can be piped. The CLI
may attach a size-capped log file with setup_logger(log_dir=...).
"""

import logging
import os
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import Optional

APP_NAME = "StableDS"

CONSOLE_FORMAT = "%(levelname)s %(name)s: %(message)s"
FILE_FORMAT = "%(asctime)s [%(levelname)s] %(module)s.%(funcName)s: %(message)s"
FILE_DATE_FORMAT = "%Y-%m-%dT%H:%M:%S"

# A fit with -v logs one line per optimizer iteration, so files roll over at 2 MB
LOG_FILE_BYTES = 2 * 1024 * 1024
LOG_FILE_BACKUPS = 5

_logger: Optional[logging.Logger] = None
_configuring = False


def verbosity_level(verbose: bool = False, quiet: bool = False) -> int:
    """Console level for the -v / -q flags; quiet wins."""
    if quiet:
        return logging.WARNING
    if verbose:
        return logging.DEBUG
    return logging.INFO


def default_log_dir() -> str:
    return os.path.join(os.path.expanduser("~"), ".stableds", "logs")


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    return handler


def _file_handler(level: int, log_dir: Optional[str], log_filename: Optional[str]) -> RotatingFileHandler:
    directory = log_dir or default_log_dir()
    os.makedirs(directory, exist_ok=True)
    filename = log_filename or f"stableds_{datetime.now():%Y%m%d}.log"
    handler = RotatingFileHandler(
        os.path.join(directory, filename),
        maxBytes=LOG_FILE_BYTES,
        backupCount=LOG_FILE_BACKUPS,
        encoding="utf-8",
    )
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(FILE_FORMAT, FILE_DATE_FORMAT))
    return handler


def get_logger(name: str = APP_NAME) -> logging.Logger:
    """
    Return the shared logger, creating a console-only one on first use.

    Args:
        name: Logger name used when the logger is created

    Returns:
        The shared logger
    """
    global _logger, _configuring

    if _logger is None and not _configuring:
        _configuring = True
        try:
            _logger = setup_logger(name, file_level=None)
        finally:
            _configuring = False

    return _logger


def setup_logger(
    name: str,
    console_level: int = logging.INFO,
    file_level: Optional[int] = logging.DEBUG,
    log_dir: Optional[str] = None,
    log_filename: Optional[str] = None,
) -> logging.Logger:
    """
    (Re)build the shared logger's handlers.

    Args:
        name: Logger name
        console_level: Level of the stderr handler
        file_level: Level of the rotating file handler; None for no file
        log_dir: Directory for the log file (default: ~/.stableds/logs)
        log_filename: File name (default: stableds_YYYYMMDD.log)

    Returns:
        The configured logger, which becomes the one get_logger() returns
    """
    global _logger

    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    logger.addHandler(_console_handler(console_level))
    if file_level is not None:
        file_handler = _file_handler(file_level, log_dir, log_filename)
        logger.addHandler(file_handler)
        logger.debug(f"Writing {logging.getLevelName(file_level)} log to {file_handler.baseFilename}")

    _logger = logger
    return logger


def update_log_levels(console_level: Optional[int] = None, file_level: Optional[int] = None) -> None:
    """
    Change handler levels in place; None keeps the current level.
    """
    if _logger is None:
        return

    for handler in _logger.handlers:
        # RotatingFileHandler is itself a StreamHandler, so test for files first
        level = file_level if isinstance(handler, logging.FileHandler) else console_level
        if level is not None:
            handler.setLevel(level)
