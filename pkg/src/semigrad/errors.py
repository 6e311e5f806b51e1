class ConfigurationError(ValueError):
    """Invalid scene, network, or training configuration."""


class ValidationError(ConfigurationError):
    """A physical precondition (energy absorption, contraction) is violated."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, bundle=None):
        super().__init__(message)
        self.bundle = bundle or {}


class EnumerationBudgetError(RuntimeError):
    pass
