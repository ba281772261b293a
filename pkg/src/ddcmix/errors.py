class DDCError(Exception):
    """Base class for all package errors."""


class InputError(DDCError, ValueError):
    """Invalid or non-finite input."""


class DimensionError(InputError):
    """Array lengths or shapes do not match."""


class ConfigError(DDCError, ValueError):
    """Invalid configuration or incompatible option combination."""


class DivergenceError(DDCError, ArithmeticError):
    """An iterate became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SingularSystemError(DDCError, ArithmeticError):
    """A linear system could not be solved to the requested accuracy."""


class EstimationError(DDCError, RuntimeError):
    """An optimization or estimation step failed."""

    def __init__(self, message, gradient_norm=None, diagnostics=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm
        self.diagnostics = diagnostics or []
