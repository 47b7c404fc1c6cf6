"""Exception hierarchy shared by the library and the command line."""


class ArrowflowError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when it is raised."""

    exit_code = 1


class ConfigError(ArrowflowError, ValueError):
    exit_code = 2


class FieldError(ArrowflowError, ValueError):
    exit_code = 2


class RenderError(ArrowflowError, ValueError):
    exit_code = 2


class FormatError(ArrowflowError):
    exit_code = 3


class ChecksumMismatch(FormatError):
    exit_code = 3


class InvariantViolation(ArrowflowError):
    exit_code = 4


class OutOfDomain(ArrowflowError):
    """Position outside the (extended) field domain. Callers treat it as trajectory death."""

    def __init__(self, x, y):
        super().__init__(f"position ({x!r}, {y!r}) is outside the field domain")
        self.x = x
        self.y = y
