"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """Two volumes or fields do not live on the same grid."""


class InvalidInputError(ValueError):
    """An argument violates a precondition (non-finite point, bad factor, ...)."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value for the given inputs."""


class DivergenceError(RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, level=None, iteration=None):
        super().__init__(message)
        self.level = level
        self.iteration = iteration


class VolumeFormatError(ValueError):
    """A volume file violates the supported format subset."""
