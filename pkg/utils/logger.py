"""
Logging configuration module.
Sets up logging for the application.
"""
import logging
import os
from logging.handlers import RotatingFileHandler

from config import LOG_FILE


def setup_logger(log_file: str = LOG_FILE, level: int = logging.INFO):
    """
    Configure logging for the application.
    Sets up console and file handlers with appropriate formatting.
    Calling it again does not stack handlers.
    """
    logger = logging.getLogger()
    logger.setLevel(level)

    if getattr(logger, "_plap_configured", False):
        return logger

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # File handler (rotating)
    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=5 * 1024 * 1024,  # 5 MB
            backupCount=5
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    # Set third-party loggers to WARNING to reduce noise
    logging.getLogger("sqlalchemy.engine").setLevel(logging.WARNING)
    logging.getLogger("sqlalchemy.pool").setLevel(logging.WARNING)

    logger._plap_configured = True
    return logger
