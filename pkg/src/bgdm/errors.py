"""Exception hierarchy shared by every module."""


class BGDMError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(BGDMError, ValueError):
    """An argument is outside its admissible range."""


class ShapeError(BGDMError, ValueError):
    """Tensor shapes do not agree."""


class TensorFormatError(BGDMError):
    """A tensor file is malformed.

    Args:
        message (str): description of the problem.
        offset (int): byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericalDegeneracyError(BGDMError, ArithmeticError):
    """A quantity needed for division is numerically zero."""


class CapabilityError(BGDMError):
    """The score model cannot provide what the configuration asks for."""


class ExternalModelError(BGDMError):
    """The external denoiser violated the exchange protocol or timed out."""


class SolverError(BGDMError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class DivergenceError(BGDMError):
    """The sampler state became non-finite or exceeded the divergence bound."""

    def __init__(self, message, step=None, t=None, max_abs=None):
        self.step = step
        self.t = t
        self.max_abs = max_abs
        super().__init__(message)


class ConfigError(BGDMError):
    """An experiment configuration is invalid."""


class ReportFormatError(BGDMError):
    """Metric CSV files do not share the expected schema."""
