"""Exception types shared across the package."""


class SuperGNNError(Exception):
    """Base class for all package errors."""


class NonFinite(SuperGNNError, FloatingPointError):
    """A tensor, loss or gradient contains NaN or Inf."""


class NoConvergence(SuperGNNError):
    """An iterative routine hit its iteration cap."""


class ShapeMismatch(SuperGNNError, ValueError):
    pass


class ConfigError(SuperGNNError, ValueError):
    pass


class GenerationExhausted(SuperGNNError):
    """Dataset generation could not satisfy its validation within the attempt cap."""


class SingleClass(SuperGNNError, ValueError):
    """A binary problem has only one class present."""


class WrongDataset(SuperGNNError, ValueError):
    """A concept family was requested on a dataset that does not define it."""


class ZeroRow(SuperGNNError, ValueError):
    """A feature matrix row has zero norm where a direction is required."""
