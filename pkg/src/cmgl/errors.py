"""Exception types shared across the package, mapped to CLI exit codes."""


class CmglError(Exception):
    """Base class for all package errors."""


class ConfigError(CmglError):
    """Invalid configuration: unknown key, bad value, unusable combination. Exit code 1."""


class DataError(CmglError):
    """Malformed or inconsistent input data. Exit code 2."""


class AlignmentError(DataError):
    """Sample ids disagree between a modality file and the labels file."""


class TrainingError(CmglError):
    """Training failed (non-finite loss, no usable candidate, ...). Exit code 3."""
