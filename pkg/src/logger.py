"""
Logging configuration for Genre Memory Model

Provides centralized logging setup with file and console output,
configurable log levels, and rotation.
"""

import logging
import logging.handlers
import sys
from pathlib import Path
from datetime import datetime

ROOT_LOGGER = 'genre_memory'


def setup_logging(level=logging.INFO, log_dir=None, max_bytes=10*1024*1024, backup_count=5,
                  log_to_console=True):
    """
    Set up logging configuration

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Directory for log files (None: console only)
        max_bytes: Maximum size of log file before rotation (default: 10MB)
        backup_count: Number of backup log files to keep (default: 5)
        log_to_console: Attach a console handler

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(logging.DEBUG)

    # Clear any existing handlers
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()

    detailed_formatter = logging.Formatter(
        '%(asctime)s | %(levelname)-8s | %(name)-28s | %(filename)s:%(lineno)d | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    simple_formatter = logging.Formatter(
        '%(asctime)s | %(levelname)-8s | %(message)s',
        datefmt='%H:%M:%S'
    )

    if log_to_console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_handler.setFormatter(simple_formatter)
        logger.addHandler(console_handler)

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)

        # File handler with rotation
        log_file = log_dir / f'genre_memory_{datetime.now().strftime("%Y%m%d")}.log'
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)  # Always log DEBUG and above to file
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)

        error_handler = logging.handlers.RotatingFileHandler(
            log_dir / 'errors.log',
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding='utf-8'
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(detailed_formatter)
        logger.addHandler(error_handler)

    if not logger.handlers:
        logger.addHandler(logging.NullHandler())

    logger.debug(f"Logging initialized: level={logging.getLevelName(level)}, log_dir={log_dir}")
    return logger


def get_logger(name=None):
    """
    Get a logger instance below the package root logger

    Args:
        name: Module name, e.g. ``src.memory`` (default: root package logger)

    Returns:
        logging.Logger: Logger instance
    """
    if name is None:
        return logging.getLogger(ROOT_LOGGER)
    return logging.getLogger(f"{ROOT_LOGGER}.{name.rsplit('.', 1)[-1]}")


def setup_logger(config, out_dir=None, debug=False):
    """
    Set up logger with configuration

    Args:
        config: LoggingConfig object
        out_dir: Run output directory; logs go to ``<out_dir>/logs``
        debug: Force DEBUG on the console

    Returns:
        logging.Logger: Configured logger instance
    """
    log_dir = None
    if config.log_to_file and out_dir is not None:
        log_dir = Path(out_dir) / 'logs'

    level = logging.DEBUG if debug else getattr(logging, config.level.upper())
    return setup_logging(
        level=level,
        log_dir=log_dir,
        max_bytes=config.max_file_size,
        backup_count=config.backup_count,
        log_to_console=config.log_to_console
    )
