class MultiQError(RuntimeError):
    """Base class for every failure raised by the library."""


class ConfigurationError(MultiQError):
    """Raised when an experiment description or argument set is invalid."""


class AssumptionViolation(MultiQError):
    """Raised when the feature covariance or data distribution breaks the analysis assumptions."""


class IterationLimitError(MultiQError):
    """Raised when an iterative solver exhausts its iteration budget."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class EnumerationLimitError(MultiQError):
    """Raised when exact enumeration of a planning tree would be too large."""


class PreconditionError(MultiQError):
    """Raised when an operation is requested outside the range where it is defined."""


class EnvironmentStateError(MultiQError):
    """Raised when a simulator is given a state it cannot represent."""


class EmptyBufferError(MultiQError):
    """Raised when sampling from a replay buffer with no contents."""


class AggregationError(MultiQError):
    """Raised when run records cannot be combined."""


class ReportError(MultiQError):
    """Raised when result files do not share one schema."""


class UnsupportedAnalysisError(MultiQError):
    """Raised when exact analysis is requested for a continuous environment."""


class DivergenceError(MultiQError):
    """Raised when a parameter update produces non-finite values."""

    def __init__(self, step: int | None):
        super().__init__(f"Parameters became non-finite at step {step}.")
        self.step = step
