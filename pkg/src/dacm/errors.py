"""Exception types raised across the engine."""


class DacmError(Exception):
    """Base class for every engine error."""


class CoincidentPointsError(DacmError, ValueError):
    pass


class MalformedFieldError(DacmError, ValueError):
    def __init__(self, column: str, value: str, reason: str = "invalid value"):
        self.column = column
        self.value = value
        super().__init__(f"column {column!r}: {reason} ({value!r})")


class TruncatedRecordError(DacmError, ValueError):
    pass


class StaleMessageError(DacmError, ValueError):
    def __init__(self, latency: float, limit: float):
        self.latency = latency
        self.limit = limit
        super().__init__(f"message latency {latency:.3f} s exceeds staleness limit {limit:.3f} s")


class SingularMatrixError(DacmError, ArithmeticError):
    pass


class TangentPlaneRangeError(DacmError, ValueError):
    pass


class FilterDivergenceError(DacmError, ArithmeticError):
    pass


class OutOfBandError(DacmError, ValueError):
    pass


class InsufficientHistoryError(DacmError, ValueError):
    pass


class EmptyRouteError(DacmError, ValueError):
    pass


class ScenarioError(DacmError, ValueError):
    """Scenario validation failure; ``line`` is 1-based when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
