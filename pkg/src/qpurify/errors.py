"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument violates a documented bound (state, control, threshold...)."""


class ConfigError(ValueError):
    """A run configuration is malformed: unknown key, bad value, missing field."""


class StabilityError(RuntimeError):
    """An explicit finite-difference sweep would violate its stability bound.

    Carries the number of time nodes that would satisfy the bound so callers
    can rerun with a finer grid.
    """

    def __init__(self, message: str, required_n_t: int | None = None):
        super().__init__(message)
        self.required_n_t = required_n_t


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance within the iteration cap."""
