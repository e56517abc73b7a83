class MtsmaeError(Exception):
    pass


class DimensionError(MtsmaeError, ValueError):
    """Shape/length mismatch between arrays or segments."""


class ConfigError(MtsmaeError, ValueError):
    """Invalid or inconsistent configuration value."""


class DataError(MtsmaeError, ValueError):
    """Bad input data (unparseable CSV, non-finite values, empty splits)."""


class TrainingAborted(MtsmaeError, RuntimeError):
    """Non-finite loss or gradients during optimization."""
