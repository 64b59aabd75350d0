"""
Constants used throughout the application.
"""

import math

# Container format
CONTAINER_MAGIC = b"MCDS1"
CONTAINER_FORMAT_VERSION = 1
CONFIG_VERSION = 1

# Parameter group naming
SHARED_KEY = "shared"
NEW_SUBJECT_KEY = "new"

# Engine
LAYER_NORM_EPS = 1e-5
SUBJECT_NORM_EPS = 1e-5
GRADCHECK_STEP = 1e-5
GRADCHECK_FLOOR = 1e-8

# Differential entropy
TWO_PI_E = 2.0 * math.pi * math.e
DE_POWER_FLOOR = 1e-12
DEFAULT_BANDS: tuple[tuple[float, float], ...] = (
    (1.0, 4.0),  # delta
    (4.0, 8.0),  # theta
    (8.0, 14.0),  # alpha
    (14.0, 31.0),  # beta
    (31.0, 49.0),  # gamma
)

# Evaluation
CLASSIFIER_TEMPERATURE = 0.1
MAX_NWAY = 40

# CLI exit codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
