"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shape or extent mismatch between operands."""


class LabelError(ValueError):
    """A class label lies outside the valid range."""


class ContractError(RuntimeError):
    """An operation was called outside its documented contract."""


class ConfigError(ValueError):
    """Invalid, inconsistent, or unknown configuration."""


class DataLoadError(RuntimeError):
    """A dataset directory or file could not be loaded."""


class CheckpointError(RuntimeError):
    """A checkpoint file is damaged or incompatible with the model."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite ones are required."""
