"""Exception hierarchy shared across the toolkit."""


class MNARError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MNARError, ValueError):
    """Inputs that must share a shape do not."""


class DomainError(MNARError, ValueError):
    """A value lies outside the domain an operation accepts."""


class EmptyObservationError(MNARError, ValueError):
    """An estimator needs at least one observed cell (or a nonzero weight sum)."""


class EvaluationError(MNARError, ArithmeticError):
    """A coefficient or objective produced a non-finite value."""


class DegenerateError(MNARError, ValueError):
    """Degenerate input for which a quantity is undefined."""


class UnsupportedMetricError(MNARError, ValueError):
    """The requested path does not support the given penalty metric."""


class DivergenceError(MNARError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class IngestError(MNARError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
