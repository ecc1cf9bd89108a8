"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions."""


class UpdateRejectedError(RuntimeError):
    """A parameter update produced a non-finite value and was rolled back.

    Carries the name of the offending parameter tensor.
    """

    def __init__(self, param_name: str, message: str | None = None):
        self.param_name = param_name
        super().__init__(message or f"non-finite update for parameter '{param_name}'")


class ConfigError(ValueError):
    """A config file or CLI override could not be parsed."""


class DataError(ValueError):
    """An input data file is malformed or has a mismatched schema."""
