"""Exception types shared across the package."""


class AccreteError(Exception):
    """Base class for all package errors."""


class ConfigError(AccreteError):
    """Invalid configuration or violated model assumption (A1..A7)."""


class DegenerateShapeError(AccreteError):
    """A shape rasterized to an empty cell set."""


class ConvergenceError(AccreteError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class HistoryError(AccreteError):
    """A strain history does not cover the requested evaluation times."""
