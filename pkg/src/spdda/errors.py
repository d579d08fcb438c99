"""Error types shared by the pipeline and the command line (each maps to an exit code)."""


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class DataError(ValueError):
    """Missing, malformed or incompatible input data."""


class NumericError(FloatingPointError):
    """A non-finite loss or parameter appeared during training."""
