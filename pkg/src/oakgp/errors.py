"""Exception hierarchy.  The CLI maps each family to a distinct exit code."""


class OakError(Exception):
    """Base class for every error raised by oakgp."""


class ConfigError(OakError, ValueError):
    """Invalid configuration, hyperparameters or out-of-scope problem size."""


class DataError(OakError, ValueError):
    """Unreadable, malformed or inconsistent input data."""


class SchemaError(DataError):
    """Prediction data whose columns do not match the training schema."""


class ModelFormatError(DataError):
    """Corrupt, truncated or incompatible model file."""


class NumericalError(OakError, ArithmeticError):
    """Factorization failure or a numerically impossible quantity."""
