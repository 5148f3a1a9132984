"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ConfigError(ValueError):
    """Raised when a configuration value is invalid or inconsistent."""


class DataError(ValueError):
    """Raised when a dataset, image file, or checkpoint cannot be read."""


class NumericError(RuntimeError):
    """Raised when a non-finite value is detected during training."""
