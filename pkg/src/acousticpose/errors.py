"""Exception taxonomy mirrored by the CLI exit codes."""


class ConfigError(ValueError):
    """Bad configuration file or option combination (exit code 2)."""


class DataError(ValueError):
    """Missing or malformed datasets, features, or checkpoints (exit code 3)."""


class NumericalError(RuntimeError):
    """Numerical verification or training failure (exit code 4)."""
