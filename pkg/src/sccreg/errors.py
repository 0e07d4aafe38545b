"""Package-wide error types.

InputError covers invalid arguments and malformed data (CLI exit code 2);
NumericalError covers runtime numerical failures (CLI exit code 3).
"""


class InputError(ValueError):
    """Invalid argument, shape, or value supplied by the caller."""


class SchemaError(InputError):
    """Malformed input file. Carries the offending path and line."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}: " if line is None else f"{path}:{line}: "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line


class NumericalError(RuntimeError):
    """A computation produced a non-finite or otherwise invalid result."""
