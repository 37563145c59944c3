"""Exception hierarchy shared by the library, the CLI and the run browser."""


class DisentError(Exception):
    """Base class for every error raised by disent_toolkit."""


class ConfigError(DisentError, ValueError):
    """Invalid configuration: unknown keys, bad values, incompatible terms."""


class ShapeError(ConfigError):
    """Tensor shapes or layer geometry do not compose."""


class NumericError(DisentError, ArithmeticError):
    """NaN/inf values or a numerically degenerate state."""


class MetricError(DisentError):
    """A disentanglement metric cannot be computed for this representation."""
