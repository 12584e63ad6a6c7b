"""Exception types shared across the package."""


class W1BenchError(Exception):
    pass


class TieError(W1BenchError):
    """Two funnels attain the minimum at the query point (non-differentiable)."""


class AtCenterError(W1BenchError):
    """The query point coincides with the active funnel's center."""


class DegenerateRayError(W1BenchError):
    """A truncated transport ray collapsed to (almost) a point."""


class ConstructionError(W1BenchError):
    pass


class NonDegeneracyError(ConstructionError):
    """Some pair of funnels has ||a_i - a_j|| == |b_i - b_j|."""


class LipschitzViolationError(ConstructionError):
    pass


class OutOfBoxError(W1BenchError):
    pass


class SamplerError(W1BenchError):
    pass


class SchemaVersionError(W1BenchError):
    pass


class ConfigError(W1BenchError):
    pass


class DivergenceError(W1BenchError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []


class AssignmentInfeasible(W1BenchError):
    pass


class ZeroFieldError(W1BenchError):
    pass


class DimensionError(W1BenchError):
    pass


class PointAtKinkWarning(UserWarning):
    """Gradient norm vanished at a penalty point; its contribution was skipped."""


class ZeroDisplacementWarning(UserWarning):
    """A mover left a point (almost) in place, so no direction could be read off."""
