"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class MindCrossError(Exception):
    """Base class for all package errors."""


class DimensionError(MindCrossError, ValueError):
    """Operand shapes do not agree."""


class ConfigError(MindCrossError, ValueError):
    """A configuration value or file is invalid."""


class UnknownSubjectError(MindCrossError, KeyError):
    """A subject id has no branch in the model."""


class DuplicateSubjectError(MindCrossError, ValueError):
    """A subject id already has a branch in the model."""


class NumericalError(MindCrossError, ArithmeticError):
    """A loss or gradient became non-finite, or a gradient check failed."""


class FrozenParameterDriftError(MindCrossError):
    """A parameter group that was frozen changed during calibration."""


class ContainerError(MindCrossError, OSError):
    """A dataset or checkpoint container could not be read."""


class BadMagicError(ContainerError):
    """The container does not start with the expected magic string."""


class TruncatedPayloadError(ContainerError):
    """The payload is shorter than the header declares."""


class VersionMismatchError(ContainerError):
    """The container was written by an unsupported format version."""


class LabelError(MindCrossError, ValueError):
    """A class or subject label lies outside the valid range."""
