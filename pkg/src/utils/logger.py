import logging
import sys
from typing import Optional, Union


def setup_logger(name: str = "src", level: Optional[Union[int, str]] = None) -> logging.Logger:
    """Set up and return a logger instance"""
    if level is None:
        level = logging.INFO
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    # Create logger
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Reuse the console handler from an earlier call
    for handler in logger.handlers:
        if getattr(handler, "_depthmotion_console", False):
            handler.setLevel(level)
            return logger

    # Create console handler and set level
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)
    handler._depthmotion_console = True

    # Create formatter
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )

    handler.setFormatter(formatter)
    logger.addHandler(handler)

    return logger
