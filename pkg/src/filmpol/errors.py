"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FilmpolError(Exception):
    exit_code = 1


class ShapeError(FilmpolError, ValueError):
    exit_code = 4


class DataError(FilmpolError, ValueError):
    exit_code = 3


class FormatError(DataError):
    """Bad magic, unsupported version, or truncated payload in a file."""


class ParameterError(FilmpolError, ValueError):
    exit_code = 2


class ConfigError(ParameterError):
    """Malformed or unknown configuration field; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class StateError(FilmpolError, RuntimeError):
    exit_code = 1


class TrainingAborted(FilmpolError, RuntimeError):
    """Non-finite loss during training. ``diagnostic`` holds the batch dump."""

    exit_code = 1

    def __init__(self, message, diagnostic=None, fold=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
        self.fold = fold
