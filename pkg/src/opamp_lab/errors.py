"""Exception hierarchy shared by the analysis engines."""


class OpampLabError(Exception):
    """Base class for all library errors."""


class AnalysisError(OpampLabError):
    """An analysis could not be set up (bad source, missing node, ...)."""


class NonConvergence(AnalysisError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularMatrix(AnalysisError):
    pass


class StepNonConvergence(NonConvergence):
    def __init__(self, message, time, residual=float("nan"), iterations=0):
        super().__init__(message, residual, iterations)
        self.time = time


class TargetUnreachable(AnalysisError):
    pass


class MetricError(OpampLabError):
    """A metric could not be extracted from simulation data."""


class NoCrossing(MetricError):
    pass


class NoCorner(MetricError):
    pass


class NoTransition(MetricError):
    pass


class ZeroGain(MetricError):
    pass


class DesignError(OpampLabError):
    pass


class AspectRatioOutOfRange(DesignError):
    pass


class BelowMinLength(DesignError):
    pass
