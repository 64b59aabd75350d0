import logging
import sys

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Basic logging setup
logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT,
    stream=sys.stderr,  # Log to stderr by default
)


def get_logger(name: str) -> logging.Logger:
    """Gets a logger instance with the specified name."""
    return logging.getLogger(name)


def configure_logging(level: str | int) -> None:
    """Applies a level to the package logger tree."""
    logging.getLogger("mindcross").setLevel(level)
