"""Exception types raised across the package."""


class DomainError(ValueError):
    """An input lies outside the domain of an operation (non-finite, wrong shape)."""


class ConfigError(ValueError):
    """A parameter set, grid or scenario configuration is invalid."""


class DivergenceError(RuntimeError):
    """A simulation left the finite / bounded region.

    ``step`` is the index of the first step whose result was rejected and
    ``partial`` holds the trajectory computed up to that point, if any.
    """

    def __init__(self, message, step=None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial
