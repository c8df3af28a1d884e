"""Exception hierarchy shared by every module."""


class AvocadoError(Exception):
    """Base class for all errors raised by the package."""


class GridMismatchError(AvocadoError, ValueError):
    pass


class GridTooSmallError(AvocadoError, ValueError):
    pass


class DegenerateConfigurationError(AvocadoError, ValueError):
    """Landmark configuration cannot support the requested solve."""


class SingularKernelError(AvocadoError, ValueError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class ParameterError(AvocadoError, ValueError):
    pass


class FormatError(AvocadoError, ValueError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class NumericalError(AvocadoError, RuntimeError):
    """A computation produced a non-finite or non-diffeomorphic result."""
