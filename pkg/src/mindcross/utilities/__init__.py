# This file makes the 'utilities' directory a Python package.
from .constants import (
    CONFIG_VERSION,
    CONTAINER_FORMAT_VERSION,
    CONTAINER_MAGIC,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_VALIDATION,
    NEW_SUBJECT_KEY,
    SHARED_KEY,
)

__all__ = [
    "CONFIG_VERSION",
    "CONTAINER_FORMAT_VERSION",
    "CONTAINER_MAGIC",
    "EXIT_IO",
    "EXIT_NUMERIC",
    "EXIT_OK",
    "EXIT_VALIDATION",
    "NEW_SUBJECT_KEY",
    "SHARED_KEY",
]
