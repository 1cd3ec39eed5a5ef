"""Exception types raised by the simulator."""


class StackfedError(Exception):
    """Base class for all library errors."""


class ConfigurationError(StackfedError):
    """Invalid configuration value or degenerate problem size."""


class ShapeError(StackfedError):
    """Dimension mismatch between parameters, data, or models."""


class InputError(StackfedError):
    """Malformed runtime input, e.g. a label outside [0, n_classes)."""


class NumericError(StackfedError):
    """Non-finite values where finite ones are required."""


class FormatError(StackfedError):
    """Malformed dataset file (bad magic, truncated payload, bad labels)."""


class UndefinedMetricError(StackfedError):
    """Metric has no defined value, e.g. AUC with a single class present."""


class WeightError(StackfedError):
    """Invalid contribution weights (non-positive entries or zero sum)."""


class StrategyError(StackfedError):
    """A weighting strategy failed; the round it belongs to is aborted."""
